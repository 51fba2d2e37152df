use std::fmt;
use std::str::FromStr;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::BinaryMask;

/// Manipulation method tag: pristine, the four face-manipulation families,
/// or the synthetic generator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "DF")]
    Deepfakes,
    #[serde(rename = "F2F")]
    Face2Face,
    #[serde(rename = "FS")]
    FaceSwap,
    #[serde(rename = "NT")]
    NeuralTextures,
    #[serde(rename = "SYNTH")]
    Synth,
    #[serde(rename = "P")]
    Pristine,
}

impl Method {
    pub const ALL: [Method; 6] =
        [Method::Deepfakes, Method::Face2Face, Method::FaceSwap, Method::NeuralTextures, Method::Synth, Method::Pristine];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Pristine => "P",
            Method::Deepfakes => "DF",
            Method::Face2Face => "F2F",
            Method::FaceSwap => "FS",
            Method::NeuralTextures => "NT",
            Method::Synth => "SYNTH",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::arg(format!("unknown method {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::arg(format!("unknown split {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: RgbImage,
    /// 0 = real, 1 = fake.
    pub label: u8,
    pub mask: Option<BinaryMask>,
    pub method: Method,
}

impl Sample {
    /// Checks label/mask consistency and dimensions.
    pub fn validate(&self) -> Result<()> {
        if self.label > 1 {
            return Err(Error::arg(format!("sample {}: label {} is not 0 or 1", self.id, self.label)));
        }
        if let Some(m) = &self.mask {
            let (w, h) = self.image.dimensions();
            if (m.width(), m.height()) != (w as usize, h as usize) {
                return Err(Error::dim(format!("sample {}: mask {}x{} vs image {w}x{h}", self.id, m.width(), m.height())));
            }
            if self.label == 0 && m.foreground() > 0 {
                return Err(Error::arg(format!("sample {}: real image with a non-empty mask", self.id)));
            }
        }
        Ok(())
    }
}
