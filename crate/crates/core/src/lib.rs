pub mod detect;
pub mod error;
pub mod eval;
pub mod exec;
pub mod fcn;
pub mod flow;
pub mod geom;
pub mod io;
pub mod map;
pub mod pipeline;
pub mod proposal;
pub mod render;
pub mod stages;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
pub use exec::Exec;
pub use geom::{iou, BBox};
pub use map::ActionnessMap;
pub use tensor::{ConvKernel, Tensor};
