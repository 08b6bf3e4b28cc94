//! Browser bindings for three operations: the similarity map between an input
//! and a reference, a pixel preview of the texture swap, and a bicubic
//! baseline with PSNR. Images cross the boundary as RGBA bytes as found in
//! canvas `ImageData`.

use reftex::imaging::{bicubic_resize, Scale};
use reftex::matcher::match_features;
use reftex::nn::{pixel_shuffle, pixel_unshuffle};
use reftex::swapper::{scale_adjust, swap_texture, Bicubic, SwapConfig, WeightMode};
use reftex::{FallbackExtractor, FeatureMap, ImageTensor, MatchConfig, MatchResult};
use wasm_bindgen::prelude::*;

fn to_js(e: reftex::Error) -> JsError {
    JsError::new(&e.to_string())
}

pub fn rgba_to_image(rgba: &[u8], width: usize, height: usize) -> reftex::Result<ImageTensor> {
    if rgba.len() != width * height * 4 {
        return Err(reftex::Error::Shape(format!("{} bytes for a {width}×{height} RGBA image", rgba.len())));
    }
    let rgb = rgba.chunks_exact(4).flat_map(|p| p[..3].iter().map(|&v| v as f32 / 255.0)).collect();
    ImageTensor::new(height, width, 3, rgb)
}

pub fn image_to_rgba(img: &ImageTensor) -> Vec<u8> {
    let rgb = img.to_rgb();
    rgb.data()
        .chunks_exact(3)
        .flat_map(|p| [p[0], p[1], p[2], 1.0].map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8))
        .collect()
}

/// Matching result for an input/reference pair.
#[wasm_bindgen]
pub struct Correspondence {
    width: usize,
    height: usize,
    matched: MatchResult<f32>,
    reference: ImageTensor,
}

impl Correspondence {
    pub fn compute(lr: &ImageTensor, reference: &ImageTensor, seed: u64) -> reftex::Result<Self> {
        let (lr_up, ref_blur) = scale_adjust(lr, reference, &Bicubic)?;
        let ex = FallbackExtractor::<f32>::new(seed);
        let matched = match_features(&ex.extract_match_level(&lr_up)?, &ex.extract_match_level(&ref_blur)?, &MatchConfig::default())?;
        Ok(Correspondence { width: lr.width(), height: lr.height(), matched, reference: reference.to_rgb() })
    }

    pub fn similarity(&self) -> &[f32] {
        self.matched.sim_map()
    }

    /// Pastes 4×4 reference pixel blocks through the feature correspondence,
    /// optionally dimmed by similarity. Output is `4H×4W`.
    pub fn transfer(&self, weighted: bool) -> reftex::Result<ImageTensor> {
        let blocks = pixel_unshuffle(&self.reference.to_chw::<f32>(), 4)?;
        let m_ref = FeatureMap::new(blocks, "pixels")?;
        let weight_mode = if weighted { WeightMode::MultiplySim } else { WeightMode::Unit };
        let cfg = SwapConfig { weight_mode, ..SwapConfig::default() };
        let swapped = swap_texture(&m_ref, &self.matched, &cfg)?;
        ImageTensor::from_chw(&pixel_shuffle(swapped.tensor(), 4)?)
    }
}

#[wasm_bindgen]
impl Correspondence {
    /// `lr` is the low-resolution input; the reference may have any size with
    /// extents divisible by 4.
    #[wasm_bindgen(constructor)]
    pub fn new(
        lr: &[u8],
        lr_width: usize,
        lr_height: usize,
        reference: &[u8],
        ref_width: usize,
        ref_height: usize,
        seed: u32,
    ) -> Result<Correspondence, JsError> {
        let lr = rgba_to_image(lr, lr_width, lr_height).map_err(to_js)?;
        let reference = rgba_to_image(reference, ref_width, ref_height).map_err(to_js)?;
        Self::compute(&lr, &reference, seed as u64).map_err(to_js)
    }

    #[wasm_bindgen(getter)]
    pub fn width(&self) -> usize {
        self.width
    }

    #[wasm_bindgen(getter)]
    pub fn height(&self) -> usize {
        self.height
    }

    #[wasm_bindgen(getter, js_name = meanSimilarity)]
    pub fn mean_similarity(&self) -> f64 {
        self.matched.mean_similarity()
    }

    /// Similarity scores as a heat-map, one RGBA pixel per input location.
    #[wasm_bindgen(js_name = similarityRgba)]
    pub fn similarity_rgba(&self) -> Vec<u8> {
        self.similarity()
            .iter()
            .flat_map(|&s| {
                let t = s.clamp(0.0, 1.0);
                [(255.0 * t) as u8, (255.0 * t * t) as u8, (255.0 * (1.0 - t)) as u8, 255]
            })
            .collect()
    }

    #[wasm_bindgen(js_name = transferRgba)]
    pub fn transfer_rgba(&self, weighted: bool) -> Result<Vec<u8>, JsError> {
        Ok(image_to_rgba(&self.transfer(weighted).map_err(to_js)?))
    }
}

/// 4× bicubic upscale of an RGBA image.
#[wasm_bindgen(js_name = bicubicUpscale)]
pub fn bicubic_upscale(rgba: &[u8], width: usize, height: usize) -> Result<Vec<u8>, JsError> {
    let img = rgba_to_image(rgba, width, height).map_err(to_js)?;
    Ok(image_to_rgba(&bicubic_resize(&img, Scale::up(4)).map_err(to_js)?))
}

/// 1/4 bicubic downscale; extents must be divisible by 4.
#[wasm_bindgen(js_name = bicubicDownscale)]
pub fn bicubic_downscale(rgba: &[u8], width: usize, height: usize) -> Result<Vec<u8>, JsError> {
    let img = rgba_to_image(rgba, width, height).map_err(to_js)?;
    Ok(image_to_rgba(&bicubic_resize(&img, Scale::down(4)).map_err(to_js)?))
}

/// PSNR in dB over RGB of two equally sized RGBA images.
#[wasm_bindgen]
pub fn psnr(a: &[u8], b: &[u8], width: usize, height: usize) -> Result<f64, JsError> {
    let a = rgba_to_image(a, width, height).map_err(to_js)?;
    let b = rgba_to_image(b, width, height).map_err(to_js)?;
    reftex::metrics::psnr(&a, &b).map_err(to_js)
}
