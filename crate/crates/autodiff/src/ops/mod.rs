mod conv;
pub(crate) mod elementwise;
mod linalg;
mod shape;
