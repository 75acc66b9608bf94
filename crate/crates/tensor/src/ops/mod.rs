mod conv;
mod elementwise;
mod linalg;
mod nn;
mod seq;
mod shape;

pub use conv::Conv2dSpec;
pub use elementwise::sigmoid;
