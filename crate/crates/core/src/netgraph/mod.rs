//! Single-task streams and their multi-task compositions: cross-connected,
//! cross-stitch and Share-k parameter sharing.

mod compose;
mod net;
mod spec;
pub mod weights;

pub use compose::{
    build_single_stream, compose_cross_connected, compose_cross_stitch, compose_shared,
    CONNECTION_INIT_STD, STITCH_INIT,
};
pub use net::{
    Connection, ConvLayer, DetectionHead, Features, Mode, MultiTaskNet, ParamId, ParamStore,
    SegmentationHead,
};
pub use spec::{
    DetectionHeadSpec, HeadSpec, SegmentationHeadSpec, StreamSpec, Task, UnitSpec, DESK_POOLS,
    DESK_WIDTHS,
};
pub use weights::{load_weights, save_weights};
