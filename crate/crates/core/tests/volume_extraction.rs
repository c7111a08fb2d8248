use manga_layout::align::{pair_pages, AlignParams};
use manga_layout::corpus::{evaluate_extraction, extract_corpus, Engines, FixtureDetector, FixtureOcr, VolumePage};
use manga_layout::layout::FixtureTagger;
use manga_layout::synth::{generate_volume, VolumeSpec};

#[test]
fn synthetic_volume_round_trip() {
    let vol = generate_volume(&VolumeSpec { pages: 6, ..VolumeSpec::default() });
    let src: Vec<VolumePage> =
        vol.pages.iter().map(|p| VolumePage { annotation: p.src.clone(), image: p.src_image.clone() }).collect();
    let dst: Vec<VolumePage> =
        vol.dst_pages().into_iter().map(|(p, i)| VolumePage { annotation: p.clone(), image: i.clone() }).collect();
    let si: Vec<_> = src.iter().map(|p| p.image.clone()).collect();
    let di: Vec<_> = dst.iter().map(|p| p.image.clone()).collect();
    let pairing = pair_pages(&si, &di, &AlignParams::default());
    for (k, p) in pairing.pairs.iter().enumerate() {
        assert_eq!(p.dst, p.src + 2, "pair {k}");
    }
    assert_eq!(pairing.pairs.len(), 6, "{:?}", pairing.warnings);
    let det = FixtureDetector { jitter: 3.0, seed: 1 };
    let engines = Engines { detector: &det, ocr: &FixtureOcr, tagger: &FixtureTagger };
    let ex = extract_corpus(&vol.id, &src, &dst, &pairing, &engines);
    assert!(ex.pages.iter().all(|p| p.error.is_none()), "{:?}", ex.pages);
    let s = evaluate_extraction(&ex.records, &vol.truth, 0.9);
    assert!(s.recall >= 0.9 && s.precision >= 0.9, "{s:?}");
}
