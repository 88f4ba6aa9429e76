use omnigait::dataset::{Modality, Split, SplitTable};
use omnigait::preprocess::{project_point_dataset, PreprocessConfig, PreprocessError};
use omnigait::synthgen::{generate_dataset, SynthConfig};

#[test]
fn reprojection_reproduces_generated_depth_maps() {
    let src = tempfile::tempdir().unwrap();
    let cfg = SynthConfig {
        n_train_subjects: 1,
        n_test_subjects: 1,
        views: vec![72],
        t_raw: 16,
        seed: 2,
        modalities: vec![
            Modality::LidarPoints,
            Modality::RadarPoints,
            Modality::LidarProjDepth,
            Modality::RadarProjDepth,
        ],
        ..SynthConfig::default()
    };
    let manifest = generate_dataset(&cfg, src.path()).unwrap();
    let out = tempfile::tempdir().unwrap();
    let projected = project_point_dataset(&manifest, &cfg.render.preprocess, out.path()).unwrap();
    assert_eq!(projected.len(), 2 * 4 * 2);
    assert_eq!(
        projected.modalities().into_iter().collect::<Vec<_>>(),
        vec![Modality::LidarProjDepth, Modality::RadarProjDepth]
    );
    let splits = SplitTable::read(out.path()).unwrap();
    assert_eq!(splits.subjects_in(Split::Test).len(), 1);

    for e in projected.entries() {
        let ours = projected.load(e).unwrap();
        let theirs = manifest.load(manifest.find(&e.meta).unwrap()).unwrap();
        let (a, b) = (ours.image().unwrap(), theirs.image().unwrap());
        assert_eq!(a.shape(), b.shape());
        let same = a.iter().zip(b).filter(|(x, y)| x == y).count();
        assert!(same as f64 >= 0.99 * a.len() as f64, "{}: {same} of {}", e.meta.key(), a.len());
    }

    // a coarser pitch changes the maps
    let coarse = PreprocessConfig {
        sparse_pitch: 0.06,
        ..cfg.render.preprocess.clone()
    };
    let out2 = tempfile::tempdir().unwrap();
    let other = project_point_dataset(&manifest, &coarse, out2.path()).unwrap();
    let e = &other.entries()[0];
    assert_ne!(other.load(e).unwrap(), projected.load(projected.find(&e.meta).unwrap()).unwrap());

    let images_only = manifest.filter(|e| e.meta.modality.is_image());
    assert!(matches!(
        project_point_dataset(&images_only, &coarse, out2.path()),
        Err(PreprocessError::NoPointSequences)
    ));
}
