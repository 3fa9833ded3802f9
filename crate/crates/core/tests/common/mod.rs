#![allow(dead_code)]

pub mod data;
pub mod gradcheck;
pub mod metric_oracle;
pub mod models;
