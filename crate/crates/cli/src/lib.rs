pub fn placeholder() -> u32 { fedaudit_core::placeholder() }
