pub mod controllers;
pub mod geometry;
pub mod model;
pub mod numkernel;
pub mod runtime;
pub mod synthesis;
