use std::fmt;
use std::ops::{Index, IndexMut};
use std::str::FromStr;

use crate::Error;

/// One of the seven scored quality dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Dimension {
    MotionSmoothness,
    TemporalFlickering,
    SubjectConsistency,
    ImagingQuality,
    AestheticQuality,
    DynamicDegree,
    SemanticAlignment,
}

impl Dimension {
    /// All dimensions in canonical order. File writers and CSV outputs use
    /// this order.
    pub const ALL: [Dimension; 7] = [
        Dimension::MotionSmoothness,
        Dimension::TemporalFlickering,
        Dimension::SubjectConsistency,
        Dimension::ImagingQuality,
        Dimension::AestheticQuality,
        Dimension::DynamicDegree,
        Dimension::SemanticAlignment,
    ];

    pub const COUNT: usize = 7;

    pub fn as_str(self) -> &'static str {
        match self {
            Dimension::MotionSmoothness => "motion_smoothness",
            Dimension::TemporalFlickering => "temporal_flickering",
            Dimension::SubjectConsistency => "subject_consistency",
            Dimension::ImagingQuality => "imaging_quality",
            Dimension::AestheticQuality => "aesthetic_quality",
            Dimension::DynamicDegree => "dynamic_degree",
            Dimension::SemanticAlignment => "semantic_alignment",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// Whether the dimension measures visual quality (as opposed to
    /// text-video semantic alignment).
    pub fn is_quality(self) -> bool {
        self != Dimension::SemanticAlignment
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Dimension {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Dimension::ALL
            .into_iter()
            .find(|d| d.as_str() == s)
            .ok_or_else(|| Error::UnknownDimension(s.to_string()))
    }
}

/// A value for every dimension, indexable by [`Dimension`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerDimension<T>(pub [T; Dimension::COUNT]);

impl<T: Copy> PerDimension<T> {
    pub fn splat(value: T) -> Self {
        PerDimension([value; Dimension::COUNT])
    }

    pub fn from_fn(mut f: impl FnMut(Dimension) -> T) -> Self {
        PerDimension(Dimension::ALL.map(&mut f))
    }

    pub fn iter(&self) -> impl Iterator<Item = (Dimension, T)> + '_ {
        Dimension::ALL.into_iter().zip(self.0.iter().copied())
    }

    pub fn map<U>(&self, f: impl FnMut(T) -> U) -> PerDimension<U> {
        PerDimension(self.0.map(f))
    }

    /// Builds the full table from a partial one, reporting the first missing
    /// dimension in canonical order.
    pub fn try_from_fn(mut f: impl FnMut(Dimension) -> Option<T>) -> Result<Self, Error> {
        let mut out = Vec::with_capacity(Dimension::COUNT);
        for d in Dimension::ALL {
            out.push(f(d).ok_or(Error::MissingDimension(d))?);
        }
        Ok(PerDimension(
            out.try_into()
                .unwrap_or_else(|_| unreachable!("seven entries")),
        ))
    }
}

impl<T> Index<Dimension> for PerDimension<T> {
    type Output = T;

    fn index(&self, d: Dimension) -> &T {
        &self.0[d.index()]
    }
}

impl<T> IndexMut<Dimension> for PerDimension<T> {
    fn index_mut(&mut self, d: Dimension) -> &mut T {
        &mut self.0[d.index()]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for d in Dimension::ALL {
            assert_eq!(d.as_str().parse::<Dimension>().unwrap(), d);
        }
        assert_eq!(Dimension::ALL.len(), Dimension::COUNT);
    }

    #[test]
    fn unknown_and_background_consistency_rejected() {
        assert!(matches!(
            "background_consistency".parse::<Dimension>(),
            Err(Error::UnknownDimension(_))
        ));
        assert!("Motion_Smoothness".parse::<Dimension>().is_err());
    }

    #[test]
    fn try_from_fn_names_missing() {
        let err = PerDimension::try_from_fn(|d| (d != Dimension::DynamicDegree).then_some(0.5))
            .unwrap_err();
        assert!(matches!(
            err,
            Error::MissingDimension(Dimension::DynamicDegree)
        ));
    }
}
