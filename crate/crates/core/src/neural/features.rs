//! Region descriptors sampled directly from page intensities. These stand in
//! for a convolutional backbone at desk scale.

use ndarray::Array3;

use crate::error::Result;
use crate::geometry::BBox;
use crate::localization::{roi_pool_bilinear, FeatureMap};
use crate::raster::GrayImage;

/// Patch grid of the reference descriptor (rows, columns).
pub const PATCH_H: usize = 12;
pub const PATCH_W: usize = 30;
pub const REFERENCE_DIM: usize = PATCH_H * PATCH_W;

const CONTEXT_H: usize = 8;
const CONTEXT_W: usize = 24;
/// Tight patch, its mean ink, the surrounding context patch and the log aspect ratio.
pub const WORDNESS_DIM: usize = REFERENCE_DIM + 1 + CONTEXT_H * CONTEXT_W + 1;

/// One-channel ink map (`1 - intensity`) of a page, so taps outside the page
/// read as blank paper.
#[derive(Debug, Clone)]
pub struct PageFeatures {
    map: FeatureMap,
}

impl PageFeatures {
    pub fn new(img: &GrayImage) -> Self {
        let data = Array3::from_shape_vec(
            (1, img.height(), img.width()),
            img.pixels().iter().map(|v| 1.0 - v).collect(),
        )
        .expect("image dimensions");
        Self { map: FeatureMap { data } }
    }

    pub fn width(&self) -> usize {
        self.map.width()
    }

    pub fn height(&self) -> usize {
        self.map.height()
    }

    fn patch(&self, bbox: &BBox, h: usize, w: usize) -> Result<Vec<f64>> {
        Ok(roi_pool_bilinear(&self.map, bbox, h, w)?.into_iter().collect())
    }

    /// Flattened `12 x 30` bilinear patch of the box, mean-subtracted.
    pub fn reference(&self, bbox: &BBox) -> Result<Vec<f64>> {
        let mut p = self.patch(bbox, PATCH_H, PATCH_W)?;
        let mean = p.iter().sum::<f64>() / p.len() as f64;
        p.iter_mut().for_each(|v| *v -= mean);
        Ok(p)
    }

    /// Descriptor for the wordness classifier: the reference patch plus its
    /// mean ink, a coarse patch of the surroundings (one box height of margin
    /// left and right, half a height above and below) and the log aspect ratio.
    pub fn wordness(&self, bbox: &BBox) -> Result<Vec<f64>> {
        let mut tight = self.patch(bbox, PATCH_H, PATCH_W)?;
        let mean = tight.iter().sum::<f64>() / tight.len() as f64;
        tight.iter_mut().for_each(|v| *v -= mean);
        let context = BBox::new(bbox.xc, bbox.yc, bbox.w + 2.0 * bbox.h, 2.0 * bbox.h);
        let mut out = tight;
        out.push(mean);
        out.extend(self.patch(&context, CONTEXT_H, CONTEXT_W)?);
        out.push(0.5 * (bbox.w / bbox.h).ln());
        Ok(out)
    }
}

/// Reference descriptor of one region of an image.
pub fn reference_features(img: &GrayImage, bbox: &BBox) -> Result<Vec<f64>> {
    PageFeatures::new(img).reference(bbox)
}
