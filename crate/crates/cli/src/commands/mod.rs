pub mod analyze;
pub mod eval;
pub mod gen_data;
pub mod report;
pub mod train;
