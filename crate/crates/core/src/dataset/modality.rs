use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// One sensor-derived data representation.
///
/// Nine variants are image based and can be fed to the network; the two
/// point-cloud variants are stored for the preprocessing pipelines only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Rgb,
    RgbSilhouette,
    Pose2dHeatmap,
    Event,
    Ir,
    IrSilhouette,
    Depth,
    LidarPoints,
    LidarProjDepth,
    RadarPoints,
    RadarProjDepth,
}

impl Modality {
    pub const ALL: [Modality; 11] = [
        Modality::Rgb,
        Modality::RgbSilhouette,
        Modality::Pose2dHeatmap,
        Modality::Event,
        Modality::Ir,
        Modality::IrSilhouette,
        Modality::Depth,
        Modality::LidarPoints,
        Modality::LidarProjDepth,
        Modality::RadarPoints,
        Modality::RadarProjDepth,
    ];

    /// The network-compatible subset, in canonical order.
    pub const IMAGE: [Modality; 9] = [
        Modality::Rgb,
        Modality::RgbSilhouette,
        Modality::Pose2dHeatmap,
        Modality::Event,
        Modality::Ir,
        Modality::IrSilhouette,
        Modality::Depth,
        Modality::LidarProjDepth,
        Modality::RadarProjDepth,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Modality::Rgb => "rgb",
            Modality::RgbSilhouette => "rgb_silhouette",
            Modality::Pose2dHeatmap => "pose2d_heatmap",
            Modality::Event => "event",
            Modality::Ir => "ir",
            Modality::IrSilhouette => "ir_silhouette",
            Modality::Depth => "depth",
            Modality::LidarPoints => "lidar_points",
            Modality::LidarProjDepth => "lidar_proj_depth",
            Modality::RadarPoints => "radar_points",
            Modality::RadarProjDepth => "radar_proj_depth",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Modality> {
        Modality::ALL.into_iter().find(|m| m.tag() == tag)
    }

    pub fn is_image(self) -> bool {
        self.channels().is_some()
    }

    /// Input channel count for image modalities, `None` for point clouds.
    pub fn channels(self) -> Option<usize> {
        match self {
            Modality::RgbSilhouette | Modality::IrSilhouette => Some(1),
            Modality::Pose2dHeatmap => Some(2),
            Modality::Rgb
            | Modality::Ir
            | Modality::Event
            | Modality::Depth
            | Modality::LidarProjDepth
            | Modality::RadarProjDepth => Some(3),
            Modality::LidarPoints | Modality::RadarPoints => None,
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown modality tag `{0}`")]
pub struct UnknownModality(pub String);

impl FromStr for Modality {
    type Err = UnknownModality;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Modality::from_tag(s).ok_or_else(|| UnknownModality(s.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nine_image_modalities() {
        assert_eq!(Modality::ALL.iter().filter(|m| m.is_image()).count(), 9);
        assert!(Modality::IMAGE.iter().all(|m| m.is_image()));
        assert!(!Modality::LidarPoints.is_image());
        assert!(!Modality::RadarPoints.is_image());
    }

    #[test]
    fn channel_table() {
        assert_eq!(Modality::RgbSilhouette.channels(), Some(1));
        assert_eq!(Modality::IrSilhouette.channels(), Some(1));
        assert_eq!(Modality::Pose2dHeatmap.channels(), Some(2));
        for m in [
            Modality::Rgb,
            Modality::Ir,
            Modality::Event,
            Modality::Depth,
            Modality::LidarProjDepth,
            Modality::RadarProjDepth,
        ] {
            assert_eq!(m.channels(), Some(3), "{m}");
        }
    }

    #[test]
    fn tags_round_trip() {
        for m in Modality::ALL {
            assert_eq!(m.tag().parse::<Modality>().unwrap(), m);
        }
        assert!("thermal".parse::<Modality>().is_err());
    }
}
