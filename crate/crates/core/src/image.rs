//! Raster containers shared by every metric and loss.

use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("invalid dimensions {height}x{width}x{channels}")]
    Dimensions {
        height: usize,
        width: usize,
        channels: usize,
    },
    #[error("sample buffer has {got} values, expected {expected}")]
    Length { expected: usize, got: usize },
    #[error("sample {value} at index {index} is outside [0, 1]")]
    OutOfRange { index: usize, value: f64 },
    #[error("unsupported channel count {0}")]
    Channels(usize),
    #[error("image size mismatch: {0:?} vs {1:?}")]
    Mismatch((usize, usize, usize), (usize, usize, usize)),
    #[error("crop {y0},{x0} {h}x{w} exceeds image bounds")]
    Crop { y0: usize, x0: usize, h: usize, w: usize },
    #[error("decode error: {0}")]
    Decode(#[from] image::ImageError),
}

/// Storage representation of an [`ImageTensor`].
#[derive(Debug, Clone, PartialEq)]
pub enum Samples {
    /// 8-bit integer samples, 255 = full scale.
    U8(Vec<u8>),
    /// Unit-interval reals.
    Unit(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleFormat {
    U8,
    Unit,
}

/// Row-major H×W×C raster with 1 or 3 channels.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    channels: usize,
    samples: Samples,
}

fn check_dims(height: usize, width: usize, channels: usize) -> Result<(), ImageError> {
    if height == 0 || width == 0 || channels == 0 {
        return Err(ImageError::Dimensions {
            height,
            width,
            channels,
        });
    }
    if channels != 1 && channels != 3 {
        return Err(ImageError::Channels(channels));
    }
    Ok(())
}

fn check_unit(data: &[f64]) -> Result<(), ImageError> {
    match data.iter().position(|v| !(0.0..=1.0).contains(v)) {
        Some(index) => Err(ImageError::OutOfRange {
            index,
            value: data[index],
        }),
        None => Ok(()),
    }
}

impl ImageTensor {
    pub fn from_u8(height: usize, width: usize, channels: usize, data: Vec<u8>) -> Result<Self, ImageError> {
        check_dims(height, width, channels)?;
        let expected = height * width * channels;
        if data.len() != expected {
            return Err(ImageError::Length {
                expected,
                got: data.len(),
            });
        }
        Ok(Self {
            height,
            width,
            channels,
            samples: Samples::U8(data),
        })
    }

    pub fn from_unit(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self, ImageError> {
        check_dims(height, width, channels)?;
        let expected = height * width * channels;
        if data.len() != expected {
            return Err(ImageError::Length {
                expected,
                got: data.len(),
            });
        }
        check_unit(&data)?;
        Ok(Self {
            height,
            width,
            channels,
            samples: Samples::Unit(data),
        })
    }

    /// Build a unit-valued image from a per-pixel closure returning channel values.
    pub fn from_fn<F>(height: usize, width: usize, channels: usize, mut f: F) -> Result<Self, ImageError>
    where
        F: FnMut(usize, usize, usize) -> f64,
    {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c).clamp(0.0, 1.0));
                }
            }
        }
        Self::from_unit(height, width, channels, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn format(&self) -> SampleFormat {
        match self.samples {
            Samples::U8(_) => SampleFormat::U8,
            Samples::Unit(_) => SampleFormat::Unit,
        }
    }

    pub fn samples(&self) -> &Samples {
        &self.samples
    }

    /// Sample at (y, x, c) on the unit scale.
    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        let i = (y * self.width + x) * self.channels + c;
        match &self.samples {
            Samples::U8(d) => d[i] as f64 / 255.0,
            Samples::Unit(d) => d[i],
        }
    }

    /// All samples on the unit scale, row-major interleaved.
    pub fn to_unit(&self) -> Vec<f64> {
        match &self.samples {
            Samples::U8(d) => d.iter().map(|&v| v as f64 / 255.0).collect(),
            Samples::Unit(d) => d.clone(),
        }
    }

    /// Quantize to 8-bit samples (round to nearest).
    pub fn to_u8(&self) -> Vec<u8> {
        match &self.samples {
            Samples::U8(d) => d.clone(),
            Samples::Unit(d) => d.iter().map(|&v| (v * 255.0).round() as u8).collect(),
        }
    }

    pub fn aspect_ratio(&self) -> f64 {
        let (a, b) = (self.height.max(self.width), self.height.min(self.width));
        a as f64 / b as f64
    }

    pub fn same_dims(&self, other: &ImageTensor) -> Result<(), ImageError> {
        if self.dims() != other.dims() {
            return Err(ImageError::Mismatch(self.dims(), other.dims()));
        }
        Ok(())
    }

    /// Copy out an `h`×`w` window whose top-left corner is (y0, x0).
    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<ImageTensor, ImageError> {
        if h == 0 || w == 0 || y0 + h > self.height || x0 + w > self.width {
            return Err(ImageError::Crop { y0, x0, h, w });
        }
        let c = self.channels;
        let rows = (y0..y0 + h).map(|y| {
            let start = (y * self.width + x0) * c;
            start..start + w * c
        });
        let samples = match &self.samples {
            Samples::U8(d) => Samples::U8(rows.flat_map(|r| d[r].iter().copied()).collect()),
            Samples::Unit(d) => Samples::Unit(rows.flat_map(|r| d[r].iter().copied()).collect()),
        };
        Ok(ImageTensor {
            height: h,
            width: w,
            channels: c,
            samples,
        })
    }

    /// Decode an 8-bit PNG/JPEG (or anything the `image` crate reads).
    ///
    /// Gray and gray-alpha images load as one channel; everything else as RGB.
    pub fn load(path: &Path) -> Result<ImageTensor, ImageError> {
        let img = image::ImageReader::open(path)
            .map_err(image::ImageError::IoError)?
            .with_guessed_format()
            .map_err(image::ImageError::IoError)?
            .decode()?;
        Ok(Self::from_dynamic(&img))
    }

    pub fn from_dynamic(img: &image::DynamicImage) -> ImageTensor {
        use image::ColorType;
        let (w, h) = (img.width() as usize, img.height() as usize);
        match img.color() {
            ColorType::L8 | ColorType::La8 | ColorType::L16 | ColorType::La16 => {
                ImageTensor::from_u8(h, w, 1, img.to_luma8().into_raw()).expect("decoder dims are consistent")
            }
            _ => ImageTensor::from_u8(h, w, 3, img.to_rgb8().into_raw()).expect("decoder dims are consistent"),
        }
    }

    /// Encode as 8-bit PNG.
    pub fn save_png(&self, path: &Path) -> Result<(), ImageError> {
        let color = if self.channels == 1 {
            image::ExtendedColorType::L8
        } else {
            image::ExtendedColorType::Rgb8
        };
        image::save_buffer_with_format(
            path,
            &self.to_u8(),
            self.width as u32,
            self.height as u32,
            color,
            image::ImageFormat::Png,
        )?;
        Ok(())
    }
}

/// Single-channel unit-interval luminance image.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl GrayImage {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self, ImageError> {
        if height == 0 || width == 0 {
            return Err(ImageError::Dimensions {
                height,
                width,
                channels: 1,
            });
        }
        if data.len() != height * width {
            return Err(ImageError::Length {
                expected: height * width,
                got: data.len(),
            });
        }
        check_unit(&data)?;
        Ok(Self { height, width, data })
    }

    /// Build from a closure; values are clamped into [0, 1].
    pub fn from_fn<F: FnMut(usize, usize) -> f64>(height: usize, width: usize, mut f: F) -> Result<Self, ImageError> {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x).clamp(0.0, 1.0));
            }
        }
        Self::new(height, width, data)
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Result<Self, ImageError> {
        Self::new(height, width, vec![value; height * width])
    }

    /// Unchecked constructor for values already known to be in range.
    pub(crate) fn from_raw(height: usize, width: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), height * width);
        Self { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Sample with coordinates clamped to the border.
    #[inline]
    pub fn get_clamped(&self, y: isize, x: isize) -> f64 {
        let y = y.clamp(0, self.height as isize - 1) as usize;
        let x = x.clamp(0, self.width as isize - 1) as usize;
        self.data[y * self.width + x]
    }

    /// Bilinear sample with border clamping.
    pub fn sample_bilinear(&self, y: f64, x: f64) -> f64 {
        let y = y.clamp(0.0, (self.height - 1) as f64);
        let x = x.clamp(0.0, (self.width - 1) as f64);
        let (y0, x0) = (y.floor() as usize, x.floor() as usize);
        let (y1, x1) = ((y0 + 1).min(self.height - 1), (x0 + 1).min(self.width - 1));
        let (fy, fx) = (y - y0 as f64, x - x0 as f64);
        let top = self.get(y0, x0) * (1.0 - fx) + self.get(y0, x1) * fx;
        let bottom = self.get(y1, x0) * (1.0 - fx) + self.get(y1, x1) * fx;
        top * (1.0 - fy) + bottom * fy
    }

    pub fn invert(&self) -> GrayImage {
        GrayImage::from_raw(self.height, self.width, self.data.iter().map(|v| 1.0 - v).collect())
    }

    /// (2r+1)×(2r+1) mean filter with clamped borders.
    pub fn box_blur(&self, radius: usize) -> GrayImage {
        let r = radius as isize;
        let (h, w) = (self.height, self.width);
        let norm = ((2 * r + 1) * (2 * r + 1)) as f64;
        let mut horiz = vec![0.0; h * w];
        for y in 0..h {
            for x in 0..w {
                let mut s = 0.0;
                for dx in -r..=r {
                    s += self.get_clamped(y as isize, x as isize + dx);
                }
                horiz[y * w + x] = s;
            }
        }
        let mut out = vec![0.0; h * w];
        for y in 0..h {
            for x in 0..w {
                let mut s = 0.0;
                for dy in -r..=r {
                    let yy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                    s += horiz[yy * w + x];
                }
                out[y * w + x] = (s / norm).clamp(0.0, 1.0);
            }
        }
        GrayImage::from_raw(h, w, out)
    }

    /// Area-average resampling to `new_h`×`new_w`.
    ///
    /// Each output pixel averages the input footprint it covers, weighting
    /// partially covered input pixels by overlap.
    pub fn resize_area(&self, new_h: usize, new_w: usize) -> GrayImage {
        assert!(new_h > 0 && new_w > 0);
        let wy = overlap_weights(self.height, new_h);
        let wx = overlap_weights(self.width, new_w);
        let mut out = vec![0.0; new_h * new_w];
        for (oy, ry) in wy.iter().enumerate() {
            for (ox, rx) in wx.iter().enumerate() {
                let mut s = 0.0;
                let mut total = 0.0;
                for &(iy, ay) in ry {
                    for &(ix, ax) in rx {
                        s += self.get(iy, ix) * ay * ax;
                        total += ay * ax;
                    }
                }
                out[oy * new_w + ox] = (s / total).clamp(0.0, 1.0);
            }
        }
        GrayImage::from_raw(new_h, new_w, out)
    }

    /// Copy of the window with top-left corner (y0, x0).
    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<GrayImage, ImageError> {
        if h == 0 || w == 0 || y0 + h > self.height || x0 + w > self.width {
            return Err(ImageError::Crop { y0, x0, h, w });
        }
        let mut data = Vec::with_capacity(h * w);
        for y in y0..y0 + h {
            data.extend_from_slice(&self.data[y * self.width + x0..y * self.width + x0 + w]);
        }
        Ok(GrayImage::from_raw(h, w, data))
    }
}

/// For each output cell, the input indices it overlaps and the overlap length.
fn overlap_weights(n_in: usize, n_out: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let lo = o as f64 * scale;
            let hi = (o + 1) as f64 * scale;
            let first = lo.floor() as usize;
            let last = (hi.ceil() as usize).min(n_in);
            (first..last)
                .filter_map(|i| {
                    let a = (hi.min((i + 1) as f64) - lo.max(i as f64)).max(0.0);
                    (a > 0.0).then_some((i, a))
                })
                .collect()
        })
        .collect()
}
