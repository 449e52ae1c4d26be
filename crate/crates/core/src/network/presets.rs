//! Desk-scale networks at a quarter of the published channel widths.

use super::config::NetworkConfig;
use crate::error::Result;

/// Three SPH3D encoder stages over 512 -> 128 -> 32 -> 8 points, a global
/// convolution and a 208-128-64-C classifier fed with the global feature
/// and the max-pooled encoder outputs.
pub const CLASSIFICATION: &str = "\
network.task = classification
network.classes = {classes}
network.global_kernel = 8x2
pyramid.level_sizes = 512, 128, 32, 8
pyramid.radii = 0.25, 0.5, 1.0, 2.0
pyramid.cap = 32
pyramid.kernel = 8x2x2
layer.mlp1 = MLP(3,16)
layer.enc1a = SPH3D(16,16)
layer.enc1b = SPH3D(16,16,1)
layer.pool1 = POOL_MAX
layer.enc2a = SPH3D(16,16,1)
layer.enc2b = SPH3D(16,32)
layer.pool2 = POOL_MAX
layer.enc3a = SPH3D(32,32,1)
layer.enc3b = SPH3D(32,32,1)
layer.pool3 = POOL_MAX
layer.enc4 = GSPH3D(32,128)
layer.concat = GLOBAL_MAX_CONCAT(enc1b,enc2b,enc3b)
layer.fc1 = FC(208,128)
layer.fc2 = FC(128,64)
layer.out = FC(64,{classes})
";

/// Two-stage U-net over 512 -> 128 -> 32 points with skip concatenations.
pub const SEGMENTATION: &str = "\
network.task = segmentation
network.classes = {classes}
pyramid.level_sizes = 512, 128, 32
pyramid.radii = 0.25, 0.5, 1.0
pyramid.cap = 32
pyramid.kernel = 8x2x2
layer.mlp1 = MLP(3,16)
layer.enc1a = SPH3D(16,32)
layer.enc1b = SPH3D(32,32)
layer.pool1 = POOL_MAX
layer.enc2a = SPH3D(32,64)
layer.enc2b = SPH3D(64,64)
layer.pool2 = POOL_MAX
layer.dec2a = SPH3D(64,64)
layer.dec2b = SPH3D(64,64)
layer.unpool2 = UNPOOL_UNIFORM
layer.skip2 = CONCAT_SKIP(enc2b)
layer.dec1a = SPH3D(128,32)
layer.dec1b = SPH3D(32,32)
layer.unpool1 = UNPOOL_UNIFORM
layer.skip1 = CONCAT_SKIP(enc1b)
layer.skip0 = CONCAT_SKIP(mlp1)
layer.head = MLP(80,32)
layer.out = FC(32,{classes})
";

pub fn preset_text(template: &str, classes: usize) -> String {
    template.replace("{classes}", &classes.to_string())
}

pub fn classification(classes: usize) -> Result<NetworkConfig> {
    NetworkConfig::parse(&preset_text(CLASSIFICATION, classes))
}

pub fn segmentation(classes: usize) -> Result<NetworkConfig> {
    NetworkConfig::parse(&preset_text(SEGMENTATION, classes))
}
