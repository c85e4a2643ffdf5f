#![allow(dead_code)]

pub mod desk;
pub mod fuzz;
pub mod gradcheck;
pub mod patch_oracle;
