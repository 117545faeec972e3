pub mod init;
pub mod layers;
pub mod mlp;
pub mod model;
pub mod spec;
pub mod unet;

pub use model::{mlp_matched, CdmModel, ModelMeta};
pub use spec::{complexity_estimate, Backbone, BlockSpec, Complexity, DenoiserSpec};
