pub mod plan;
pub mod report;
pub mod simulate;
pub mod timing;
