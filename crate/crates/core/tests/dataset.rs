use std::collections::BTreeMap;

use geomat_core::dataset::{
    point_in_polygon, sample_patches, square_inside_polygon, synth_generate, Manifest, SampleRequest, SynthSpec,
    ViewPose,
};
use geomat_core::geometry::PATCH_SIZE;

/// Two classes, three surfaces each, one large frontal view per surface.
fn large_spec() -> SynthSpec {
    let mut spec = SynthSpec::benchmark();
    spec.image_size = 900;
    spec.region_half_size = 430.0;
    spec.supersample = 1;
    spec.normal_step = 8;
    spec.views = vec![ViewPose { incidence_deg: 0.0, azimuth_deg: 0.0 }];
    spec.classes.truncate(2);
    for c in &mut spec.classes {
        c.surfaces = 3;
    }
    spec.scene = None;
    spec
}

fn count_by<K: Ord>(items: impl Iterator<Item = K>) -> BTreeMap<K, usize> {
    let mut out = BTreeMap::new();
    for k in items {
        *out.entry(k).or_insert(0) += 1;
    }
    out
}

#[test]
fn sampling_reproduces_worked_counts_and_contains_patches() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth_generate(&large_spec(), dir.path()).unwrap();
    let split = manifest.split.clone().unwrap();
    assert_eq!((split.train.len(), split.test.len()), (4, 2));

    let scales = vec![100, 200, 400, 800];
    let train = sample_patches(&manifest, &split.train, &SampleRequest { per_category: 100, scales: scales.clone(), seed: 1 }).unwrap();
    let test = sample_patches(&manifest, &split.test, &SampleRequest { per_category: 50, scales, seed: 1 }).unwrap();
    let per_cat = |ps: &[geomat_core::patch::PatchBundle]| count_by(ps.iter().map(|p| p.category.unwrap()));
    assert_eq!(per_cat(&train).values().copied().collect::<Vec<_>>(), vec![400, 400]);
    assert_eq!(per_cat(&test).values().copied().collect::<Vec<_>>(), vec![200, 200]);

    for p in train.iter().chain(&test) {
        assert_eq!(p.rgb.dimensions(), (PATCH_SIZE as u32, PATCH_SIZE as u32));
        let region = &manifest.surfaces[p.surface].images[p.image].regions[0];
        let r = p.rect;
        assert!(square_inside_polygon(region, r.x as f64 - 0.5, r.y as f64 - 0.5, r.width as f64));
        assert!(point_in_polygon(region, r.x as f64, r.y as f64));
        for s in p.normals.samples() {
            assert!(s.u >= -0.5 && s.u <= PATCH_SIZE as f64 - 0.5);
            assert!(s.v >= -0.5 && s.v <= PATCH_SIZE as f64 - 0.5);
        }
    }
}

#[test]
fn allocation_is_seed_independent_and_sampling_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = large_spec();
    spec.image_size = 500;
    spec.region_half_size = 230.0;
    spec.views.push(ViewPose { incidence_deg: 20.0, azimuth_deg: 45.0 });
    let manifest = synth_generate(&spec, dir.path()).unwrap();
    let all: Vec<usize> = (0..manifest.surfaces.len()).collect();
    let req = |seed| SampleRequest { per_category: 13, scales: vec![100, 200], seed };
    let a = sample_patches(&manifest, &all, &req(1)).unwrap();
    let b = sample_patches(&manifest, &all, &req(1)).unwrap();
    let c = sample_patches(&manifest, &all, &req(2)).unwrap();
    assert_eq!(a, b);
    let key = |ps: &[geomat_core::patch::PatchBundle]| count_by(ps.iter().map(|p| (p.surface, p.image, p.rect.width)));
    assert_eq!(key(&a), key(&c));
    assert_ne!(
        a.iter().map(|p| p.rect).collect::<Vec<_>>(),
        c.iter().map(|p| p.rect).collect::<Vec<_>>()
    );
}

#[test]
fn oversized_scale_is_skipped() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = large_spec();
    spec.image_size = 300;
    spec.region_half_size = 140.0;
    let manifest = synth_generate(&spec, dir.path()).unwrap();
    let all: Vec<usize> = (0..manifest.surfaces.len()).collect();
    let patches = sample_patches(&manifest, &all, &SampleRequest { per_category: 10, scales: vec![100, 400], seed: 0 }).unwrap();
    assert_eq!(patches.len(), 20);
    assert!(patches.iter().all(|p| p.rect.width == 100));
}

#[test]
fn generated_manifest_loads_back() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = large_spec();
    spec.image_size = 200;
    spec.region_half_size = 90.0;
    let m = synth_generate(&spec, dir.path()).unwrap();
    let loaded = Manifest::load(&dir.path().join("manifest.json")).unwrap();
    assert_eq!(loaded, m);
    assert_eq!(loaded.base_dir(), dir.path());
}
