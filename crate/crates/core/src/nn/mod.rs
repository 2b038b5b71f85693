//! Layer protocols, model descriptors and the plaintext reference.

mod layers;
mod model;
mod reference;
mod secure;
mod weights;

pub use layers::{
    conv_layer, conv_products, fc_layer, fc_products, pool_layer, square_layer, square_products,
};
pub use model::{
    network1, network2, network3, network4, network5, network_by_name, ConvGeom, Layer,
    ModelDescriptor, Padding,
};
pub use reference::{
    argmax, conv_ring_raw, fc_ring_raw, forward_real, forward_ring, pool_ring, real_logits,
    ring_logits,
};
pub use secure::{secure_forward, LayerStat, LayerTrace};
pub use weights::{Model, ModelShare, BUNDLE_MAGIC, MODEL_MAGIC};
