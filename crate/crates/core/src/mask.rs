//! Ground-truth and prediction masks.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Background,
    Foreground,
    /// Excluded from loss and metrics.
    Ignore,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMask {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<Label>,
}

impl LabelMask {
    pub fn new(width: usize, height: usize, labels: Vec<Label>) -> Self {
        assert_eq!(labels.len(), width * height, "label count does not match {width}x{height}");
        Self { width, height, labels }
    }

    pub fn filled(width: usize, height: usize, label: Label) -> Self {
        Self::new(width, height, vec![label; width * height])
    }

    /// Foreground exactly where `bits` is set, no ignore region.
    pub fn from_binary(mask: &BinaryMask) -> Self {
        let labels = mask
            .bits
            .iter()
            .map(|&b| if b { Label::Foreground } else { Label::Background })
            .collect();
        Self::new(mask.width, mask.height, labels)
    }

    pub fn count(&self, label: Label) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    /// Binary mask with foreground where the label is foreground.
    pub fn foreground(&self) -> BinaryMask {
        BinaryMask::new(
            self.width,
            self.height,
            self.labels.iter().map(|&l| l == Label::Foreground).collect(),
        )
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask {
    pub width: usize,
    pub height: usize,
    pub bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Self {
        assert_eq!(bits.len(), width * height, "bit count does not match {width}x{height}");
        Self { width, height, bits }
    }

    pub fn complement(&self) -> Self {
        Self::new(self.width, self.height, self.bits.iter().map(|b| !b).collect())
    }
}
