use num_rational::Ratio;
use wplab_core::extension::{extend_points, propagate_on};
use wplab_core::field::{read_dump, write_dump, FrequencyField, Lattice};
use wplab_core::geometry::p_k_exponent;
use wplab_core::params::critical_exponent_raw;
use wplab_core::surface::Surface;
use wplab_core::wavepackets::decompose;
use wplab_core::{rng, C64};

#[test]
fn propagator_matches_direct_summation() {
    let g = FrequencyField::plane_waves(3, 1, 1.0 / 64.0, 0.9, 4, 6.0);
    let x = Lattice::new(vec![-8.0], vec![0.5], vec![33]);
    let times = [0.0, 1.5, 7.25];
    let ev = propagate_on(&g, 2.0, &times, &x).unwrap();
    let s = Surface::Fractional { alpha: 2.0 };
    for (it, &t) in times.iter().enumerate() {
        let pts: Vec<Vec<f64>> = x.axis_coords(0).iter().map(|&xi| vec![xi, t]).collect();
        let direct = extend_points(&g, &s, &pts).unwrap();
        for (a, b) in direct.iter().zip(&ev.slices[it]) {
            assert!((a - b).norm() < 1e-10 * a.norm().max(1.0), "{a} {b}");
        }
    }
}

#[test]
fn packet_extensions_sum_to_the_extension() {
    let f = FrequencyField::plane_waves(4, 2, 1.0 / 32.0, 0.6, 3, 10.0);
    let set = decompose(&f, &Surface::Paraboloid, 16.0, 0.05, &[0.0; 3]).unwrap();
    let mut g = rng::stream(5, 0);
    let pts: Vec<Vec<f64>> = (0..6).map(|_| (0..3).map(|_| rng::uniform(&mut g, -8.0, 8.0)).collect()).collect();
    let whole = extend_points(&set.padded_input(), &Surface::Paraboloid, &pts).unwrap();
    let mut acc = vec![C64::new(0.0, 0.0); pts.len()];
    for i in 0..set.len() {
        for (a, v) in acc.iter_mut().zip(extend_points(&set.materialize(i), &Surface::Paraboloid, &pts).unwrap()) {
            *a += v;
        }
    }
    let scale = whole.iter().map(|v| v.norm()).fold(0.0, f64::max);
    for (a, b) in acc.iter().zip(&whole) {
        assert!((a - b).norm() <= 1e-8 * scale, "{a} {b}");
    }
}

#[test]
fn dump_file_round_trip() {
    let g = FrequencyField::plane_waves(6, 1, 1.0 / 32.0, 0.9, 2, 4.0);
    let x = Lattice::new(vec![-4.0], vec![0.25], vec![33]);
    let ev = propagate_on(&g, 2.0, &[1.0], &x).unwrap();
    let field = ev.slice_field(0);
    let path = std::env::temp_dir().join(format!("wplab-pipeline-{}.bin", std::process::id()));
    let mut file = std::fs::File::create(&path).unwrap();
    write_dump(&mut file, 2, &field).unwrap();
    drop(file);
    let bytes = std::fs::read(&path).unwrap();
    std::fs::remove_file(&path).unwrap();
    assert_eq!(&bytes[..6], b"WPLAB1");
    assert_eq!(bytes.len(), 64 + 16 * 33);
    let (hdr, vals) = read_dump(&mut bytes.as_slice()).unwrap();
    assert_eq!(hdr.dims, vec![33, 1]);
    assert_eq!(vals, field.values);
}

#[test]
fn endpoint_exponent_links_both_formulas() {
    let p = p_k_exponent(3, 2).unwrap();
    assert_eq!(p, Ratio::new(13, 4));
    let pf = *p.numer() as f64 / *p.denom() as f64;
    let b = critical_exponent_raw(2.0, 3, pf);
    assert!((b - 2.0 / 13.0).abs() < 1e-15);
}
