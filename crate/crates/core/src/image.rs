//! Row-major 8-bit raster.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ImageError {
    #[error("image dimensions must be at least 1x1, got {width}x{height}")]
    EmptyDimensions { width: usize, height: usize },
    #[error("unsupported channel count {0} (expected 1 or 3)")]
    UnsupportedChannels(usize),
    #[error("sample buffer holds {actual} bytes, dimensions require {expected}")]
    LengthMismatch { expected: usize, actual: usize },
}

/// Interleaved 8-bit image, `x` is the column and `y` the row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    channels: usize,
    samples: Vec<u8>,
}

impl ImageBuffer {
    pub fn new(
        width: usize,
        height: usize,
        channels: usize,
        samples: Vec<u8>,
    ) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::EmptyDimensions { width, height });
        }
        if channels != 1 && channels != 3 {
            return Err(ImageError::UnsupportedChannels(channels));
        }
        let expected = width * height * channels;
        if samples.len() != expected {
            return Err(ImageError::LengthMismatch {
                expected,
                actual: samples.len(),
            });
        }
        Ok(Self {
            width,
            height,
            channels,
            samples,
        })
    }

    /// Image with every sample set to `value`.
    pub fn filled(
        width: usize,
        height: usize,
        channels: usize,
        value: u8,
    ) -> Result<Self, ImageError> {
        Self::new(width, height, channels, vec![value; width * height * channels])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn samples(&self) -> &[u8] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<u8> {
        self.samples
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> u8 {
        self.samples[self.index(x, y, c)]
    }

    /// The pixel at `(x, y)` as a slice of `channels` samples.
    pub fn pixel(&self, x: usize, y: usize) -> &[u8] {
        let start = self.index(x, y, 0);
        &self.samples[start..start + self.channels]
    }

    /// Extracts one channel as a single-channel image.
    pub fn channel(&self, c: usize) -> ImageBuffer {
        assert!(c < self.channels, "channel {c} out of range");
        let samples = self
            .samples
            .chunks_exact(self.channels)
            .map(|px| px[c])
            .collect();
        ImageBuffer {
            width: self.width,
            height: self.height,
            channels: 1,
            samples,
        }
    }

    /// Interleaves single-channel planes of equal size into one image.
    pub fn interleave(planes: &[ImageBuffer]) -> Result<ImageBuffer, ImageError> {
        let first = planes.first().ok_or(ImageError::UnsupportedChannels(0))?;
        let (width, height) = (first.width, first.height);
        let channels = planes.len();
        let mut samples = Vec::with_capacity(width * height * channels);
        for i in 0..width * height {
            for p in planes {
                if p.channels != 1 || p.width != width || p.height != height {
                    return Err(ImageError::LengthMismatch {
                        expected: width * height,
                        actual: p.samples.len() / p.channels.max(1),
                    });
                }
                samples.push(p.samples[i]);
            }
        }
        ImageBuffer::new(width, height, channels, samples)
    }
}
