//! Which neighbours hide the query object, and whether it still needs work.

use serde::{Deserialize, Serialize};

use crate::backends::{Backends, DepthVerdict, Instance};
use crate::config::PipelineConfig;
use crate::error::Result;
use crate::raster::{BinaryMask, ImageBuffer, SideSet};

/// Provenance of one segmented instance seen during analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub category: String,
    pub score: f64,
    pub area: usize,
    /// Depth relation to the query, for neighbours only.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verdict: Option<DepthVerdict>,
    pub occluder: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OcclusionReport {
    pub neighbor_masks: Vec<BinaryMask>,
    pub occluder_masks: Vec<BinaryMask>,
    /// Union of the grown occluder masks, minus the query pixels.
    pub occluder_union: BinaryMask,
    pub boundary_sides: SideSet,
    pub is_occluded: bool,
    pub instances: Vec<InstanceRecord>,
}

/// Manifest form of a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcclusionSummary {
    pub neighbors: usize,
    pub occluders: usize,
    pub occluder_area: usize,
    pub boundary_sides: SideSet,
    pub is_occluded: bool,
    pub instances: Vec<InstanceRecord>,
}

impl OcclusionReport {
    pub fn summary(&self) -> OcclusionSummary {
        OcclusionSummary {
            neighbors: self.neighbor_masks.len(),
            occluders: self.occluder_masks.len(),
            occluder_area: self.occluder_union.area(),
            boundary_sides: self.boundary_sides,
            is_occluded: self.is_occluded,
            instances: self.instances.clone(),
        }
    }
}

/// Whether an instance is the query object itself rather than a neighbour:
/// at least half of its pixels lie inside the modal mask.
fn is_query_instance(inst: &BinaryMask, modal: &BinaryMask) -> Result<bool> {
    let area = inst.area();
    Ok(area > 0 && 2 * inst.intersection_area(modal)? >= area)
}

/// Indices of instances meeting the modal mask grown by `radius` pixels.
pub fn find_neighbors(instances: &[Instance], modal: &BinaryMask, radius: u32) -> Result<Vec<usize>> {
    let grown = modal.dilate_square(radius);
    let mut out = Vec::new();
    for (i, inst) in instances.iter().enumerate() {
        if inst.mask.intersection_area(&grown)? > 0 && !is_query_instance(&inst.mask, modal)? {
            out.push(i);
        }
    }
    Ok(out)
}

/// Depth verdict of each neighbour against the query; a neighbour is an
/// occluder only when it is judged closer.
pub fn select_occluders(
    image: &ImageBuffer,
    modal: &BinaryMask,
    neighbors: &[&BinaryMask],
    backends: &Backends,
) -> Result<Vec<DepthVerdict>> {
    neighbors
        .iter()
        .map(|n| backends.order_depth(image, n, modal))
        .collect()
}

pub fn build_occlusion_report(
    image: &ImageBuffer,
    modal: &BinaryMask,
    category: &str,
    config: &PipelineConfig,
    backends: &Backends,
) -> Result<OcclusionReport> {
    let instances = backends.segment_instances(image, &config.vocabulary_for(category))?;
    report_from_instances(image, modal, &instances, config, backends)
}

/// Analysis over an already segmented image.
pub fn report_from_instances(
    image: &ImageBuffer,
    modal: &BinaryMask,
    instances: &[Instance],
    config: &PipelineConfig,
    backends: &Backends,
) -> Result<OcclusionReport> {
    let neighbor_idx = find_neighbors(instances, modal, config.neighbor_radius)?;
    let neighbor_masks: Vec<&BinaryMask> = neighbor_idx.iter().map(|&i| &instances[i].mask).collect();
    let verdicts = select_occluders(image, modal, &neighbor_masks, backends)?;

    let mut records: Vec<InstanceRecord> = instances
        .iter()
        .map(|i| InstanceRecord {
            category: i.category.clone(),
            score: i.score,
            area: i.mask.area(),
            verdict: None,
            occluder: false,
        })
        .collect();
    let mut occluder_masks = Vec::new();
    let mut union = BinaryMask::empty(modal.width(), modal.height())?;
    for (&i, &v) in neighbor_idx.iter().zip(&verdicts) {
        records[i].verdict = Some(v);
        if v == DepthVerdict::FirstCloser {
            records[i].occluder = true;
            let m = &instances[i].mask;
            union = union.union(&m.dilate_square(config.occluder_dilation))?;
            occluder_masks.push(m.clone());
        }
    }
    let occluder_union = union.difference(modal)?;
    let boundary_sides = modal.touches_boundary(config.boundary_eps);
    let is_occluded = !occluder_union.is_empty() || !boundary_sides.is_empty();
    Ok(OcclusionReport {
        neighbor_masks: neighbor_masks.into_iter().cloned().collect(),
        occluder_masks,
        occluder_union,
        boundary_sides,
        is_occluded,
        instances: records,
    })
}

#[cfg(test)]
mod tests {
    use std::path::Path;
    use std::sync::Arc;

    use super::*;
    use crate::backends::scene::preset;
    use crate::backends::MockBackend;
    use crate::raster::{BBox, Side};

    fn inst(mask: BinaryMask) -> Instance {
        Instance {
            mask,
            category: "x".into(),
            score: 0.5,
        }
    }

    fn rect(x0: u32, y0: u32, x1: u32, y1: u32) -> BinaryMask {
        BinaryMask::rect(100, 100, BBox::new(x0, y0, x1, y1).unwrap()).unwrap()
    }

    #[test]
    fn neighbour_radius() {
        let modal = rect(20, 20, 40, 40);
        let adjacent = inst(rect(41, 20, 50, 40));
        let far = inst(rect(90, 90, 100, 100));
        let query = inst(rect(20, 20, 40, 40));
        let n = find_neighbors(&[adjacent, far, query], &modal, 5).unwrap();
        assert_eq!(n, vec![0]);
        assert!(find_neighbors(&[], &modal, 5).unwrap().is_empty());
    }

    fn mock_scene(name: &str) -> (Backends, crate::backends::ScriptedScene) {
        let scene = preset(name).unwrap().file.build(Path::new(".")).unwrap();
        (Backends::uniform(Arc::new(MockBackend::new(scene.clone()))), scene)
    }

    #[test]
    fn surfer_occluder_is_the_person() {
        let (b, scene) = mock_scene("surfer");
        let img = scene.photo_image();
        let modal = scene.visible_mask_in_photo(0).unwrap();
        let cfg = PipelineConfig::default();
        let r = build_occlusion_report(&img, &modal, "surfboard", &cfg, &b).unwrap();
        assert!(r.is_occluded);
        let person = scene.visible_mask_in_photo(1).unwrap();
        assert_eq!(r.occluder_masks, vec![person.clone()]);
        assert_eq!(r.occluder_union, person.dilate_square(2).difference(&modal).unwrap());
        assert_eq!(r.occluder_union.intersection_area(&modal).unwrap(), 0);
        assert!(r.boundary_sides.is_empty());
    }

    #[test]
    fn person_is_not_occluded_by_the_board() {
        let (b, scene) = mock_scene("surfer");
        let img = scene.photo_image();
        let modal = scene.visible_mask_in_photo(1).unwrap();
        let r = build_occlusion_report(&img, &modal, "person", &PipelineConfig::default(), &b).unwrap();
        assert_eq!(r.neighbor_masks.len(), 1);
        assert!(r.occluder_masks.is_empty());
        assert!(!r.is_occluded);
    }

    #[test]
    fn edge_object_is_occluded_by_the_boundary() {
        let (b, scene) = mock_scene("edge");
        let img = scene.photo_image();
        let modal = scene.visible_mask_in_photo(0).unwrap();
        let r = build_occlusion_report(&img, &modal, "giraffe", &PipelineConfig::default(), &b).unwrap();
        assert!(r.occluder_union.is_empty());
        assert_eq!(r.boundary_sides.iter().collect::<Vec<_>>(), vec![Side::Left]);
        assert!(r.is_occluded);
    }

    #[test]
    fn unknown_depth_is_not_an_occluder() {
        let mut scene = preset("surfer").unwrap().file.build(Path::new(".")).unwrap();
        scene.unknown_pairs = vec![(0, 1)];
        let b = Backends::uniform(Arc::new(MockBackend::new(scene.clone())));
        let img = scene.photo_image();
        let modal = scene.visible_mask_in_photo(0).unwrap();
        let r = build_occlusion_report(&img, &modal, "surfboard", &PipelineConfig::default(), &b).unwrap();
        assert_eq!(r.instances[1].verdict, Some(DepthVerdict::Unknown));
        assert!(!r.is_occluded);
    }
}
