//! VGG-16 topology with a configurable classifier width.

use super::{LayerSpec, NetworkError, NetworkGraph, Result};

pub const VGG16_INPUT: [usize; 3] = [3, 224, 224];

/// Convolutions per block and their channel width.
const BLOCKS: [(usize, usize); 5] = [(2, 64), (2, 128), (3, 256), (3, 512), (3, 512)];

/// Unweighted VGG-16: five 3x3 conv blocks each followed by 2x2/2 max
/// pooling, then FC-4096, FC-4096, FC-`num_classes` and softmax.
///
/// Layer names follow the usual `conv{block}_{index}`, `pool{block}`,
/// `fc6`..`fc8`, `prob` scheme.
pub fn build_vgg16_age(num_classes: usize) -> Result<NetworkGraph> {
    if num_classes < 2 {
        return Err(NetworkError::NumClasses(num_classes));
    }
    let mut layers = Vec::with_capacity(40);
    for (b, &(convs, channels)) in BLOCKS.iter().enumerate() {
        let block = b + 1;
        for i in 1..=convs {
            layers.push(LayerSpec::conv(format!("conv{block}_{i}"), channels, 3, 1));
            layers.push(LayerSpec::relu(format!("relu{block}_{i}")));
        }
        layers.push(LayerSpec::max_pool(format!("pool{block}"), 2, 2));
    }
    layers.push(LayerSpec::flatten("flatten"));
    layers.push(LayerSpec::fully_connected("fc6", 4096));
    layers.push(LayerSpec::relu("relu6"));
    layers.push(LayerSpec::fully_connected("fc7", 4096));
    layers.push(LayerSpec::relu("relu7"));
    layers.push(LayerSpec::fully_connected("fc8", num_classes));
    layers.push(LayerSpec::softmax("prob"));
    NetworkGraph::new(VGG16_INPUT.to_vec(), layers)
}

/// Small age network with the same layer vocabulary as VGG-16:
/// conv(8, 3x3) + relu + pool, conv(16, 3x3) + relu + pool, flatten,
/// FC-`hidden` + relu, FC-`num_classes`, softmax. `side` must be divisible
/// by 4.
pub fn build_toy_age_net(side: usize, num_classes: usize) -> Result<NetworkGraph> {
    if num_classes < 2 {
        return Err(NetworkError::NumClasses(num_classes));
    }
    NetworkGraph::new(
        vec![3, side, side],
        vec![
            LayerSpec::conv("conv1", 8, 3, 1),
            LayerSpec::relu("relu1"),
            LayerSpec::max_pool("pool1", 2, 2),
            LayerSpec::conv("conv2", 16, 3, 1),
            LayerSpec::relu("relu2"),
            LayerSpec::max_pool("pool2", 2, 2),
            LayerSpec::flatten("flatten"),
            LayerSpec::fully_connected("fc1", 64),
            LayerSpec::relu("relu3"),
            LayerSpec::fully_connected("fc2", num_classes),
            LayerSpec::softmax("prob"),
        ],
    )
}
