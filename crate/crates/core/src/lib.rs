pub mod geometry;
pub mod vision;
pub mod page;
pub mod layout;
pub mod bubble;
pub mod align;
pub mod context;
pub mod typeset;
pub mod corpus;
pub mod hashing;
pub mod synth;
pub mod pipeline;
