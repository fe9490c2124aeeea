pub mod nvs;
pub mod prep;
pub mod report;
pub mod run;
pub mod validate;
