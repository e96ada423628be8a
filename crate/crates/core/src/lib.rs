pub mod config;
pub mod convex;
pub mod error;
pub mod experiment;
pub mod fem;
pub mod linalg;
pub mod mesh;
pub mod rothe;
pub mod thinlayer;
