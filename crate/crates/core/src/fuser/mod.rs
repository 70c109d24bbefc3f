//! Deformable cross attention between two BEV feature maps, the two-pass
//! block that alternates query and key/value roles, and the multi-scale
//! pyramid fuser built from it.
//!
//! All layers work on token-major buffers (`[H·W, C]`) internally; the public
//! entry points take and return `[C, H, W]` [`FeatureMap`]s.

mod conv_fuser;
mod dca;
mod ddca;
mod feature_map;
mod pyramid;

pub use conv_fuser::{conv_fuser_backward, conv_fuser_forward, ConvFuserParams};
pub use dca::{
    dca_backward, dca_forward, dca_forward_cached, DcaCache, DcaConfig, DcaParams, FULL_SCALE_HEADS, FULL_SCALE_POINTS,
};
pub use ddca::{
    ddca_backward, ddca_forward, ddca_forward_cached, DdcaCache, DdcaParams, SubBlockParams, FFN_EXPANSION,
};
pub use feature_map::{FeatureMap, Modality};
pub use pyramid::{
    fp_ddca_backward, fp_ddca_forward, fp_ddca_forward_cached, FpDdcaCache, FpDdcaConfig, FpDdcaParams,
    InteractionOrder, ScaleMerge, ScaleSchedule,
};
