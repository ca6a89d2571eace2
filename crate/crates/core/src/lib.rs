pub mod detector;
pub mod error;
pub mod eval;
pub mod exec;
pub mod geometry;
pub mod latency;
pub mod nms;
pub mod pipeline;
pub mod scene;
pub mod sensor;
