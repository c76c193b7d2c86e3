use crate::error::{invalid, Result};
use crate::geometry::CharBox;
use crate::pathsig::SignatureMap;
use crate::preprocess::{Raster, Trajectory};

/// What a line looks like to the recognizer or to the preprocessing stage.
#[derive(Clone, Debug, PartialEq)]
pub enum LineInput {
    Raster(Raster),
    Trajectory(Trajectory),
    Signature(SignatureMap),
}

impl LineInput {
    pub fn height(&self) -> Option<usize> {
        match self {
            LineInput::Raster(r) => Some(r.height()),
            LineInput::Signature(s) => Some(s.height()),
            LineInput::Trajectory(_) => None,
        }
    }

    pub fn width(&self) -> Option<usize> {
        match self {
            LineInput::Raster(r) => Some(r.width()),
            LineInput::Signature(s) => Some(s.width()),
            LineInput::Trajectory(_) => None,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            LineInput::Raster(_) => "raster",
            LineInput::Trajectory(_) => "trajectory",
            LineInput::Signature(_) => "signature",
        }
    }
}

/// One line with its transcript and, when known, one box per character.
#[derive(Clone, Debug, PartialEq)]
pub struct TextLineSample {
    pub id: String,
    pub input: LineInput,
    pub transcript: Vec<usize>,
    pub boxes: Option<Vec<CharBox>>,
}

impl TextLineSample {
    pub fn new(
        id: impl Into<String>,
        input: LineInput,
        transcript: Vec<usize>,
        boxes: Option<Vec<CharBox>>,
    ) -> Result<Self> {
        if transcript.is_empty() {
            return invalid("transcript is empty");
        }
        if let Some(b) = &boxes {
            if b.len() != transcript.len() {
                return invalid(format!(
                    "{} boxes for a transcript of {} characters",
                    b.len(),
                    transcript.len()
                ));
            }
            if b.windows(2).any(|w| w[0].rect.center().0 > w[1].rect.center().0) {
                return invalid("boxes are not sorted left to right");
            }
        }
        Ok(Self {
            id: id.into(),
            input,
            transcript,
            boxes,
        })
    }
}
