pub mod baseline;
pub mod detect;
pub mod diagnose;
pub mod report;
pub mod simulate;
pub mod train;
