fn main() { let _ = fedaudit::placeholder(); }
