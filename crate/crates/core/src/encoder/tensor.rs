use crate::error::{Error, Result};
use crate::image::Image;
use crate::scalar::Scalar;

/// `B x C x H x W` activation tensor, row-major (NCHW).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap<T> {
    batch: usize,
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<T>,
}

impl<T: Scalar> FeatureMap<T> {
    pub fn new(
        batch: usize,
        channels: usize,
        height: usize,
        width: usize,
        data: Vec<T>,
    ) -> Result<Self> {
        if batch == 0 || channels == 0 || height == 0 || width == 0 {
            return Err(Error::Shape(
                "feature map dimensions must be positive".into(),
            ));
        }
        if data.len() != batch * channels * height * width {
            return Err(Error::Shape(format!(
                "{} values do not form a {batch}x{channels}x{height}x{width} map",
                data.len()
            )));
        }
        Ok(Self {
            batch,
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(batch: usize, channels: usize, height: usize, width: usize) -> Self {
        Self::filled(batch, channels, height, width, T::zero())
    }

    pub fn filled(batch: usize, channels: usize, height: usize, width: usize, value: T) -> Self {
        Self {
            batch,
            channels,
            height,
            width,
            data: vec![value; batch * channels * height * width],
        }
    }

    pub fn from_fn(
        batch: usize,
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize, usize) -> T,
    ) -> Self {
        let mut data = Vec::with_capacity(batch * channels * height * width);
        for b in 0..batch {
            for c in 0..channels {
                for y in 0..height {
                    for x in 0..width {
                        data.push(f(b, c, y, x));
                    }
                }
            }
        }
        Self {
            batch,
            channels,
            height,
            width,
            data,
        }
    }

    /// Single-sample map from an image, channels first.
    pub fn from_image(image: &Image<T>) -> Self {
        Self::from_fn(
            1,
            image.channels(),
            image.height(),
            image.width(),
            |_, c, y, x| image.get(y, x, c),
        )
    }

    /// Sample `b` as an image (channels last).
    pub fn to_image(&self, b: usize) -> Image<T> {
        Image::from_fn(self.height, self.width, self.channels, |y, x, c| {
            self.get(b, c, y, x)
        })
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.batch, self.channels, self.height, self.width]
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    #[inline]
    fn offset(&self, b: usize, c: usize, y: usize, x: usize) -> usize {
        ((b * self.channels + c) * self.height + y) * self.width + x
    }

    #[inline]
    pub fn get(&self, b: usize, c: usize, y: usize, x: usize) -> T {
        self.data[self.offset(b, c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, b: usize, c: usize, y: usize, x: usize, v: T) {
        let o = self.offset(b, c, y, x);
        self.data[o] = v;
    }

    pub fn plane(&self, b: usize, c: usize) -> &[T] {
        let o = self.offset(b, c, 0, 0);
        &self.data[o..o + self.height * self.width]
    }

    pub fn plane_mut(&mut self, b: usize, c: usize) -> &mut [T] {
        let o = self.offset(b, c, 0, 0);
        let n = self.height * self.width;
        &mut self.data[o..o + n]
    }

    /// Channel vector at one pixel.
    pub fn pixel(&self, b: usize, y: usize, x: usize) -> Vec<T> {
        (0..self.channels).map(|c| self.get(b, c, y, x)).collect()
    }

    pub fn map(mut self, f: impl Fn(T) -> T) -> Self {
        for v in &mut self.data {
            *v = f(*v);
        }
        self
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Global average pool of sample `b` to one value per channel.
    pub fn global_average(&self, b: usize) -> Vec<T> {
        let n = T::from_usize_lossy(self.height * self.width);
        (0..self.channels)
            .map(|c| self.plane(b, c).iter().copied().sum::<T>() / n)
            .collect()
    }
}
