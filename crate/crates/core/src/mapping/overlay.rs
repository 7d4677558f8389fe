use serde::{Deserialize, Serialize};

use super::MappingError;
use crate::mask::BinaryMask;
use crate::model::{RasterImage, Rgb};
use crate::segmentation::ClassRegion;

/// Overlay colours, assigned to regions in this order.
pub const PALETTE: [(&str, [u8; 3]); 8] = [
    ("red", [255, 0, 0]),
    ("blue", [0, 0, 255]),
    ("green", [0, 255, 0]),
    ("yellow", [255, 255, 0]),
    ("magenta", [255, 0, 255]),
    ("cyan", [0, 255, 255]),
    ("orange", [255, 128, 0]),
    ("purple", [128, 0, 128]),
];

/// A segmented component with its overlay colour.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentRegion {
    pub class_label: String,
    pub class_index: u8,
    pub mask: BinaryMask,
    pub color_name: String,
    pub overlay_color: Rgb,
    pub centroid: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LegendEntry {
    pub color: String,
    pub rgb: Rgb,
    pub label: String,
}

/// Colour name to component label, in palette order.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Legend {
    pub entries: Vec<LegendEntry>,
}

impl Legend {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn color_names(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.color.as_str()).collect()
    }

    pub fn label_of(&self, color: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|e| e.color.eq_ignore_ascii_case(color))
            .map(|e| e.label.as_str())
    }

    /// `{color: label}` object handed to providers as a request parameter.
    pub fn to_param(&self) -> serde_json::Value {
        self.entries
            .iter()
            .map(|e| (e.color.clone(), serde_json::Value::from(e.label.clone())))
            .collect::<serde_json::Map<_, _>>()
            .into()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Overlay {
    pub image: RasterImage,
    pub legend: Legend,
    pub regions: Vec<ComponentRegion>,
}

/// Half-and-half blend, rounding halves up.
pub fn blend(base: u8, color: u8) -> u8 {
    ((base as u16 + color as u16 + 1) / 2) as u8
}

/// Tint every region with its palette colour at alpha 0.5. Pixels outside
/// all regions and every alpha value are left as they were.
pub fn build_overlay(image: &RasterImage, regions: &[ClassRegion]) -> Result<Overlay, MappingError> {
    if regions.len() > PALETTE.len() {
        return Err(MappingError::PaletteExhausted {
            regions: regions.len(),
            palette: PALETTE.len(),
        });
    }
    for (i, r) in regions.iter().enumerate() {
        if (r.mask.width(), r.mask.height()) != (image.width(), image.height()) {
            return Err(MappingError::RegionSize(r.label.clone()));
        }
        if regions[..i].iter().any(|o| o.mask.intersects(&r.mask)) {
            return Err(MappingError::OverlappingRegions(r.label.clone()));
        }
    }
    let composed = image.map_pixels(|buf| {
        for (r, (_, rgb)) in regions.iter().zip(PALETTE) {
            for (i, _) in r.mask.bits().iter().enumerate().filter(|(_, on)| **on) {
                for c in 0..3 {
                    buf[i * 4 + c] = blend(buf[i * 4 + c], rgb[c]);
                }
            }
        }
    });
    let mut legend = Legend::default();
    let mut out = Vec::with_capacity(regions.len());
    for (r, (name, rgb)) in regions.iter().zip(PALETTE) {
        legend.entries.push(LegendEntry {
            color: name.to_owned(),
            rgb: Rgb(rgb),
            label: r.label.clone(),
        });
        out.push(ComponentRegion {
            class_label: r.label.clone(),
            class_index: r.class_index,
            mask: r.mask.clone(),
            color_name: name.to_owned(),
            overlay_color: Rgb(rgb),
            centroid: r.mask.centroid().unwrap_or_default(),
        });
    }
    Ok(Overlay {
        image: composed,
        legend,
        regions: out,
    })
}
