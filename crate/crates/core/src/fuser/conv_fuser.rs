use rand::Rng;

use crate::error::{Error, Result};
use crate::numkit::{concat_channels, split_channels, Conv2d, ParamSet, Tensor};

use super::feature_map::{FeatureMap, Modality};

/// Convolutional baseline: channel concat of radar and camera, then a 3×3
/// convolution back to `C` channels.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvFuserParams {
    pub conv: Conv2d,
}

impl ConvFuserParams {
    pub fn init<R: Rng + ?Sized>(channels: usize, rng: &mut R) -> Self {
        ConvFuserParams {
            conv: Conv2d::init(2 * channels, channels, 3, rng),
        }
    }

    pub fn channels(&self) -> usize {
        self.conv.out_channels()
    }
}

impl ParamSet for ConvFuserParams {
    fn tensors(&self) -> Vec<&Tensor> {
        self.conv.tensors()
    }
    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.conv.tensors_mut()
    }
}

fn stacked(params: &ConvFuserParams, radar: &FeatureMap, camera: &FeatureMap) -> Result<Tensor> {
    radar.check_compatible(camera, "conv_fuser")?;
    if params.conv.in_channels() != 2 * radar.channels() {
        return Err(Error::Dimension {
            op: "conv_fuser",
            axis: 0,
            expected: params.conv.in_channels() / 2,
            got: radar.channels(),
        });
    }
    concat_channels(&[&radar.tensor, &camera.tensor])
}

pub fn conv_fuser_forward(params: &ConvFuserParams, radar: &FeatureMap, camera: &FeatureMap) -> Result<FeatureMap> {
    let x = stacked(params, radar, camera)?;
    FeatureMap::new(params.conv.forward(&x)?, Modality::Fused, radar.resolution)
}

/// Returns `(dradar, dcamera, grads)`.
pub fn conv_fuser_backward(
    params: &ConvFuserParams,
    radar: &FeatureMap,
    camera: &FeatureMap,
    dout: &Tensor,
) -> Result<(Tensor, Tensor, ConvFuserParams)> {
    let x = stacked(params, radar, camera)?;
    let (dx, conv) = params.conv.backward(&x, dout)?;
    let c = radar.channels();
    let mut parts = split_channels(&dx, &[c, c])?.into_iter();
    let dr = parts.next().expect("two parts");
    let dc = parts.next().expect("two parts");
    Ok((dr, dc, ConvFuserParams { conv }))
}
