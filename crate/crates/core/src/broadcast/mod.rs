pub mod cosend;
pub mod rb;
pub mod recrb;
