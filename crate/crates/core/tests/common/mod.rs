#![allow(dead_code)]

pub mod gradcheck;
pub mod oracles;
pub mod persistence;
pub mod routing;
pub mod trends;
