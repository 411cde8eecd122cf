#![allow(dead_code)]

pub mod fd;
pub mod gradcases;
pub mod spaces;
