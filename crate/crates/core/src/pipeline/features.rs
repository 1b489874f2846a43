//! Dense image feature maps and the fixed two-layer convolutional
//! extractor that stands in for a CNN backbone at desk scale.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::init::uniform_fan_in;
use crate::nn::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureSource {
    File,
    ToyExtractor,
    Zero,
}

/// H' x W' x C grid of features over the normalized extent [0,1]²,
/// bilinearly samplable at normalized coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Row-major (y, x, c).
    pub data: Vec<f64>,
    pub source: FeatureSource,
}

impl FeatureMap {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        FeatureMap {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
            source: FeatureSource::Zero,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::invalid("feature map dims must be >= 1"));
        }
        if self.data.len() != self.height * self.width * self.channels {
            return Err(Error::invalid("feature map size mismatch"));
        }
        if !self.data.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("non-finite feature map values"));
        }
        Ok(())
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize) -> &[f64] {
        let base = (y * self.width + x) * self.channels;
        &self.data[base..base + self.channels]
    }

    /// Bilinear sample at normalized (x, y); the extent [0,1] maps corner
    /// to corner, so grid points are hit exactly.
    pub fn sample(&self, pos: [f64; 2]) -> Vec<f64> {
        let gx = pos[0].clamp(0.0, 1.0) * (self.width - 1).max(0) as f64;
        let gy = pos[1].clamp(0.0, 1.0) * (self.height - 1).max(0) as f64;
        let x0 = (gx.floor() as usize).min(self.width - 1);
        let y0 = (gy.floor() as usize).min(self.height - 1);
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let dx = gx - x0 as f64;
        let dy = gy - y0 as f64;
        let mut out = vec![0.0; self.channels];
        let corners = [
            (self.at(y0, x0), (1.0 - dx) * (1.0 - dy)),
            (self.at(y0, x1), dx * (1.0 - dy)),
            (self.at(y1, x0), (1.0 - dx) * dy),
            (self.at(y1, x1), dx * dy),
        ];
        for (vals, w) in corners {
            for (o, v) in out.iter_mut().zip(vals) {
                *o += w * v;
            }
        }
        out
    }

    /// Mean over grid points inside a normalized rectangle; falls back to
    /// a center sample when the rectangle covers no grid point.
    pub fn box_mean(&self, rect: [f64; 4]) -> Vec<f64> {
        let [x0, y0, x1, y1] = rect;
        let mut out = vec![0.0; self.channels];
        let mut count = 0usize;
        for y in 0..self.height {
            let ny = if self.height > 1 { y as f64 / (self.height - 1) as f64 } else { 0.5 };
            if ny < y0 || ny > y1 {
                continue;
            }
            for x in 0..self.width {
                let nx = if self.width > 1 { x as f64 / (self.width - 1) as f64 } else { 0.5 };
                if nx < x0 || nx > x1 {
                    continue;
                }
                for (o, v) in out.iter_mut().zip(self.at(y, x)) {
                    *o += v;
                }
                count += 1;
            }
        }
        if count == 0 {
            return self.sample([(x0 + x1) / 2.0, (y0 + y1) / 2.0]);
        }
        for o in &mut out {
            *o /= count as f64;
        }
        out
    }
}

/// One 3x3 stride-2 convolution with zero padding 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvLayer {
    pub in_channels: usize,
    pub out_channels: usize,
    /// [out_channels, in_channels * 9]
    pub weight: Tensor,
    pub bias: Tensor,
}

impl ConvLayer {
    fn seeded(rng: &mut ChaCha8Rng, in_channels: usize, out_channels: usize) -> Self {
        ConvLayer {
            in_channels,
            out_channels,
            weight: uniform_fan_in(rng, out_channels, in_channels * 9),
            bias: Tensor::zeros(&[out_channels]),
        }
    }

    fn apply(&self, input: &[f64], h: usize, w: usize) -> (Vec<f64>, usize, usize) {
        let oh = h.div_ceil(2);
        let ow = w.div_ceil(2);
        let mut out = vec![0.0; oh * ow * self.out_channels];
        for oy in 0..oh {
            for ox in 0..ow {
                for oc in 0..self.out_channels {
                    let mut acc = self.bias.data()[oc];
                    for ic in 0..self.in_channels {
                        for ky in 0..3usize {
                            let iy = (oy * 2 + ky) as i64 - 1;
                            if iy < 0 || iy >= h as i64 {
                                continue;
                            }
                            for kx in 0..3usize {
                                let ix = (ox * 2 + kx) as i64 - 1;
                                if ix < 0 || ix >= w as i64 {
                                    continue;
                                }
                                let vin = input[(iy as usize * w + ix as usize) * self.in_channels + ic];
                                let wgt = self.weight.data()
                                    [oc * self.in_channels * 9 + ic * 9 + ky * 3 + kx];
                                acc += vin * wgt;
                            }
                        }
                    }
                    // ReLU baked into the layer.
                    out[(oy * ow + ox) * self.out_channels + oc] = acc.max(0.0);
                }
            }
        }
        (out, oh, ow)
    }
}

/// Fixed (untrained) feature extractor: two 3x3 stride-2 convolutions
/// with ReLU, seeded deterministically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyExtractor {
    pub conv1: ConvLayer,
    pub conv2: ConvLayer,
}

impl ToyExtractor {
    pub fn seeded(seed: u64, channels: [usize; 2]) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7e57_f3a7_0000_0001);
        ToyExtractor {
            conv1: ConvLayer::seeded(&mut rng, 1, channels[0]),
            conv2: ConvLayer::seeded(&mut rng, channels[0], channels[1]),
        }
    }

    pub fn out_channels(&self) -> usize {
        self.conv2.out_channels
    }

    pub fn extract(&self, pixels: &[u8], width: u16, height: u16) -> FeatureMap {
        let input: Vec<f64> = pixels.iter().map(|&p| p as f64 / 255.0).collect();
        let (a, h1, w1) = self.conv1.apply(&input, height as usize, width as usize);
        let (b, h2, w2) = self.conv2.apply(&a, h1, w1);
        FeatureMap {
            height: h2,
            width: w2,
            channels: self.conv2.out_channels,
            data: b,
            source: FeatureSource::ToyExtractor,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map2x2() -> FeatureMap {
        FeatureMap {
            height: 2,
            width: 2,
            channels: 1,
            data: vec![1.0, 2.0, 3.0, 4.0],
            source: FeatureSource::File,
        }
    }

    #[test]
    fn sample_hits_grid_points_exactly() {
        let m = map2x2();
        assert_eq!(m.sample([0.0, 0.0]), vec![1.0]);
        assert_eq!(m.sample([1.0, 0.0]), vec![2.0]);
        assert_eq!(m.sample([0.0, 1.0]), vec![3.0]);
        assert_eq!(m.sample([1.0, 1.0]), vec![4.0]);
    }

    #[test]
    fn sample_midpoint_is_mean_of_corners() {
        let m = map2x2();
        assert_eq!(m.sample([0.5, 0.5]), vec![2.5]);
    }

    #[test]
    fn constant_map_samples_constant() {
        let m = FeatureMap {
            height: 3,
            width: 5,
            channels: 2,
            data: vec![7.5; 3 * 5 * 2],
            source: FeatureSource::File,
        };
        for p in [[0.0, 0.0], [0.3, 0.9], [1.0, 0.2]] {
            assert_eq!(m.sample(p), vec![7.5, 7.5]);
        }
    }

    #[test]
    fn box_mean_over_full_extent() {
        let m = map2x2();
        assert_eq!(m.box_mean([0.0, 0.0, 1.0, 1.0]), vec![2.5]);
    }

    #[test]
    fn box_mean_empty_falls_back_to_center() {
        let m = map2x2();
        let tiny = m.box_mean([0.4, 0.4, 0.45, 0.45]);
        let center = m.sample([(0.4 + 0.45) / 2.0, (0.4 + 0.45) / 2.0]);
        assert_eq!(tiny, center);
    }

    #[test]
    fn extractor_shapes_and_determinism() {
        let e1 = ToyExtractor::seeded(3, [4, 6]);
        let e2 = ToyExtractor::seeded(3, [4, 6]);
        assert_eq!(e1, e2);
        let pixels: Vec<u8> = (0..64u32 * 48).map(|i| (i % 251) as u8).collect();
        let m = e1.extract(&pixels, 64, 48);
        assert_eq!((m.height, m.width, m.channels), (12, 16, 6));
        m.validate().unwrap();
        let m2 = e2.extract(&pixels, 64, 48);
        assert_eq!(m, m2);
    }
}
