use crate::perception::Scale;

/// Side of every crop fed to the autoencoders.
pub const CROP: usize = 32;
/// Pixels averaged per side when building the coarse crop.
pub const COARSE_POOL: usize = 3;
/// Sensor-pixel span of the coarse crop.
pub const COARSE_SPAN: usize = CROP * COARSE_POOL;

/// RGB image whose top-left pixel sits at `(origin_x, origin_y)` on the
/// full sensor, so partial renders and full frames share coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub origin_x: usize,
    pub origin_y: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize, origin_x: usize, origin_y: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), width * height * 3, "image buffer size");
        Self {
            width,
            height,
            origin_x,
            origin_y,
            data,
        }
    }

    pub fn filled(width: usize, height: usize, rgb: [f32; 3]) -> Self {
        let data = rgb.iter().copied().cycle().take(width * height * 3).collect();
        Self::new(width, height, 0, 0, data)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    /// Pixel at absolute sensor coordinates.
    pub fn at(&self, x: usize, y: usize) -> [f32; 3] {
        assert!(
            x >= self.origin_x && y >= self.origin_y && x < self.origin_x + self.width && y < self.origin_y + self.height,
            "pixel ({x},{y}) outside rendered window"
        );
        let i = 3 * ((y - self.origin_y) * self.width + (x - self.origin_x));
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Mean over `pool × pool` blocks of the `CROP·pool` square starting at
    /// absolute `(x0, y0)`; `pool = 1` is a plain crop.
    pub fn pooled_crop(&self, x0: usize, y0: usize, pool: usize) -> Crop {
        let norm = 1.0 / (pool * pool) as f32;
        let mut data = Vec::with_capacity(CROP * CROP * 3);
        for cy in 0..CROP {
            for cx in 0..CROP {
                let mut acc = [0.0f32; 3];
                for dy in 0..pool {
                    for dx in 0..pool {
                        let p = self.at(x0 + cx * pool + dx, y0 + cy * pool + dy);
                        acc.iter_mut().zip(p).for_each(|(a, v)| *a += v);
                    }
                }
                data.extend(acc.iter().map(|a| a * norm));
            }
        }
        Image::new(CROP, CROP, 0, 0, data)
    }
}

/// A 32×32 RGB crop.
pub type Crop = Image;

/// Left/right crops of one scale at times t and t−1.
#[derive(Clone, Debug, PartialEq)]
pub struct ScaleView {
    pub left: Crop,
    pub right: Crop,
    pub prev_left: Crop,
    pub prev_right: Crop,
}

/// Fine and coarse crops of both cameras at t and t−1.
#[derive(Clone, Debug, PartialEq)]
pub struct BinocularObservation {
    pub fine: ScaleView,
    pub coarse: ScaleView,
}

impl BinocularObservation {
    /// Values in [`BinocularObservation::to_flat`].
    pub const FLAT_LEN: usize = 8 * CROP * CROP * 3;

    pub fn scale(&self, scale: Scale) -> &ScaleView {
        match scale {
            Scale::Fine => &self.fine,
            Scale::Coarse => &self.coarse,
        }
    }

    fn crops(&self) -> [&Crop; 8] {
        let (f, c) = (&self.fine, &self.coarse);
        [&f.left, &f.right, &f.prev_left, &f.prev_right, &c.left, &c.right, &c.prev_left, &c.prev_right]
    }

    /// All eight crops concatenated: fine then coarse, each `L, R, L_prev, R_prev`.
    pub fn to_flat(&self) -> Vec<f32> {
        let mut out = Vec::with_capacity(Self::FLAT_LEN);
        for c in self.crops() {
            out.extend_from_slice(c.data());
        }
        out
    }

    pub fn from_flat(data: &[f32]) -> Option<Self> {
        if data.len() != Self::FLAT_LEN {
            return None;
        }
        let mut crops = data
            .chunks_exact(CROP * CROP * 3)
            .map(|d| Image::new(CROP, CROP, 0, 0, d.to_vec()));
        let mut view = || {
            Some(ScaleView {
                left: crops.next()?,
                right: crops.next()?,
                prev_left: crops.next()?,
                prev_right: crops.next()?,
            })
        };
        let fine = view()?;
        let coarse = view()?;
        Some(Self { fine, coarse })
    }
}

/// Rendered left/right images of one time step.
#[derive(Clone, Debug, PartialEq)]
pub struct StereoFrame {
    pub left: Image,
    pub right: Image,
}

/// Top-left sensor coordinates of the centered `span × span` square.
pub fn centered_origin(sensor_width: usize, sensor_height: usize, span: usize) -> (usize, usize) {
    ((sensor_width - span) / 2, (sensor_height - span) / 2)
}

fn scale_view(current: &StereoFrame, previous: &StereoFrame, x0: usize, y0: usize, pool: usize) -> ScaleView {
    ScaleView {
        left: current.left.pooled_crop(x0, y0, pool),
        right: current.right.pooled_crop(x0, y0, pool),
        prev_left: previous.left.pooled_crop(x0, y0, pool),
        prev_right: previous.right.pooled_crop(x0, y0, pool),
    }
}

/// Fine scale: central 32×32 crop at native resolution. Coarse scale:
/// central 96×96 region averaged over 3×3 blocks.
pub fn extract_observation(
    current: &StereoFrame,
    previous: &StereoFrame,
    sensor_width: usize,
    sensor_height: usize,
) -> BinocularObservation {
    let (fx, fy) = centered_origin(sensor_width, sensor_height, CROP);
    let (cx, cy) = centered_origin(sensor_width, sensor_height, COARSE_SPAN);
    BinocularObservation {
        fine: scale_view(current, previous, fx, fy, 1),
        coarse: scale_view(current, previous, cx, cy, COARSE_POOL),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(img: Image) -> StereoFrame {
        StereoFrame {
            left: img.clone(),
            right: img,
        }
    }

    #[test]
    fn fine_crop_is_centered() {
        assert_eq!(centered_origin(320, 240, CROP), (144, 104));
        assert_eq!(centered_origin(320, 240, COARSE_SPAN), (112, 72));
        // encode column/row into the pixel value
        let mut data = Vec::new();
        for y in 0..240 {
            for x in 0..320 {
                data.extend([x as f32, y as f32, 0.0]);
            }
        }
        let f = frame(Image::new(320, 240, 0, 0, data));
        let obs = extract_observation(&f, &f, 320, 240);
        assert_eq!(&obs.fine.left.data()[..2], &[144.0, 104.0]);
        let last = obs.fine.left.data().len() - 3;
        assert_eq!(&obs.fine.left.data()[last..last + 2], &[175.0, 135.0]);
    }

    #[test]
    fn constant_image_gives_constant_crops() {
        let f = frame(Image::filled(320, 240, [0.3, 0.6, 0.9]));
        let obs = extract_observation(&f, &f, 320, 240);
        for view in [&obs.fine, &obs.coarse] {
            for c in [&view.left, &view.right, &view.prev_left, &view.prev_right] {
                for px in c.data().chunks(3) {
                    for (a, b) in px.iter().zip([0.3f32, 0.6, 0.9]) {
                        assert!((a - b).abs() < 1e-6);
                    }
                }
            }
        }
    }

    #[test]
    fn coarse_pooling_averages_blocks() {
        // 3x3-blocked checkerboard: blocks alternate 0 / 1 with a per-block offset
        let mut data = Vec::new();
        for y in 0..240usize {
            for x in 0..320usize {
                let bx = (x as i64 - 112).div_euclid(3);
                let by = (y as i64 - 72).div_euclid(3);
                let v = if (bx + by).rem_euclid(2) == 0 { 0.0 } else { 1.0 };
                data.extend([v, v, v]);
            }
        }
        let f = frame(Image::new(320, 240, 0, 0, data));
        let obs = extract_observation(&f, &f, 320, 240);
        let c = &obs.coarse.left;
        for cy in 0..CROP {
            for cx in 0..CROP {
                let expect = c.at(cx, cy)[0];
                assert!(expect == 0.0 || expect == 1.0, "block mean {expect}");
                assert_eq!(expect, if (cx + cy) % 2 == 0 { 0.0 } else { 1.0 });
            }
        }
    }

    #[test]
    fn partial_window_uses_absolute_coordinates() {
        let img = Image::new(2, 1, 10, 20, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]);
        assert_eq!(img.at(11, 20), [0.4, 0.5, 0.6]);
    }
}
