//! Heatmaps and box overlays as RGB tensors (write them with
//! [`crate::io::write_png`]).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::FlowField;
use crate::geom::BBox;
use crate::map::ActionnessMap;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Palette {
    #[default]
    Gray,
    /// Black → red → yellow → white.
    Heat,
}

impl std::str::FromStr for Palette {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gray" => Ok(Palette::Gray),
            "heat" => Ok(Palette::Heat),
            _ => Err(Error::invalid(format!("unknown palette {s:?} (gray, heat)"))),
        }
    }
}

fn color(v: f32, palette: Palette) -> [f32; 3] {
    let v = v.clamp(0.0, 1.0);
    match palette {
        Palette::Gray => [v; 3],
        Palette::Heat => [(3.0 * v).min(1.0), (3.0 * v - 1.0).clamp(0.0, 1.0), (3.0 * v - 2.0).clamp(0.0, 1.0)],
    }
}

/// Map values in `[0, 1]` to colours.
pub fn heatmap(map: &ActionnessMap, palette: Palette) -> Tensor<f32> {
    let data = map.values().iter().flat_map(|&v| color(v, palette)).collect();
    Tensor::new(map.height(), map.width(), 3, data).expect("sized buffer")
}

/// Flow magnitude normalised by its maximum (all-zero flow stays black).
pub fn flow_magnitude(flow: &FlowField, palette: Palette) -> Tensor<f32> {
    let mag = flow.magnitude();
    let max = mag.iter().cloned().fold(0.0f32, f32::max);
    let scaled: Vec<f32> = mag.iter().map(|&m| if max > 0.0 { m / max } else { 0.0 }).collect();
    heatmap(&ActionnessMap::new(flow.height(), flow.width(), scaled).expect("in range"), palette)
}

/// `frame` blended with a heatmap of `map` (`alpha` is the heatmap weight).
pub fn blend(frame: &Tensor<f32>, map: &ActionnessMap, alpha: f32, palette: Palette) -> Result<Tensor<f32>> {
    if frame.channels() != 3 || (frame.height(), frame.width()) != (map.height(), map.width()) {
        return Err(Error::shape(format!(
            "frame {:?} and map {}x{} differ",
            frame.shape(),
            map.height(),
            map.width()
        )));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid(format!("alpha {alpha} outside [0, 1]")));
    }
    let heat = heatmap(map, palette);
    let data = frame.data().iter().zip(heat.data()).map(|(&f, &h)| (1.0 - alpha) * f + alpha * h).collect();
    Tensor::new(frame.height(), frame.width(), 3, data)
}

/// Draw one-pixel rectangle outlines, clipped to the image.
pub fn draw_boxes(image: &Tensor<f32>, boxes: &[BBox], rgb: [f32; 3]) -> Result<Tensor<f32>> {
    if image.channels() != 3 {
        return Err(Error::shape(format!("overlay needs 3 channels, got {}", image.channels())));
    }
    let mut out = image.clone();
    let (h, w) = (image.height() as i32, image.width() as i32);
    let mut put = |r: i32, c: i32| {
        if (0..h).contains(&r) && (0..w).contains(&c) {
            for (ch, v) in rgb.iter().enumerate() {
                out.set(r as usize, c as usize, ch, *v);
            }
        }
    };
    for b in boxes.iter().filter(|b| !b.is_empty()) {
        let (x2, y2) = (b.x2 - 1, b.y2 - 1);
        for x in b.x1..=x2 {
            put(b.y1, x);
            put(y2, x);
        }
        for y in b.y1..=y2 {
            put(y, b.x1);
            put(y, x2);
        }
    }
    Ok(out)
}
