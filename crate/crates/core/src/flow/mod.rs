//! Flow matching on the canonical slice.

pub mod loss;
pub mod mlp;
pub mod net;
pub mod params;
pub mod path;
pub mod tape;
pub mod train;
