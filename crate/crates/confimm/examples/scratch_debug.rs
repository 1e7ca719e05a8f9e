use confimm::convex::*;
use confimm::fixtures::torus_of_revolution_normalized;
use confimm::geometry::pullback_metric;
use confimm::grid::Grid;

fn main() {
    let n = 256usize;
    // Mildly short map: alpha stays small.
    let f0 = torus_of_revolution_normalized(n, 2.0, 1.0).unwrap().scaled(0.9);
    let rho_v = 0.05f64;
    let rho_u = 0.05f64;

    for nv in [4usize, 8] {
        let fv = corrugate_along(&f0, CorrugationDirection::V, &Grid::from_value(n, rho_v), nv).unwrap();
        let pb_v = pullback_metric(&fv.map);
        for nu in [8usize, 16, 32] {
            if nu <= nv { continue; }
            let fu = corrugate_along(&fv.map, CorrugationDirection::U, &Grid::from_value(n, rho_u), nu).unwrap();
            let pb_u = pullback_metric(&fu.map);
            let mut ef = [0.0f64; 3];
            for (a, b) in pb_u.values().iter().zip(pb_v.values()) {
                ef[0] = ef[0].max((a.e - b.e - rho_u).abs());
                ef[1] = ef[1].max((a.f - b.f).abs());
                ef[2] = ef[2].max((a.g - b.g).abs());
            }
            println!("nv={nv:3} nu={nu:3}: E err {:.5}  F pol {:.5}  G pol {:.5}  (rel to rho {:.2})", ef[0], ef[1], ef[2], ef[2]/rho_u);
        }
    }
    // Stage-2 style: V-corrugation on top of existing fast U-wiggles.
    let fu = corrugate_along(&f0, CorrugationDirection::U, &Grid::from_value(n, rho_u), 32).unwrap();
    let pb_u = pullback_metric(&fu.map);
    for nv in [4usize, 8, 16, 32] {
        let fv = corrugate_along(&fu.map, CorrugationDirection::V, &Grid::from_value(n, rho_v), nv).unwrap();
        let pb_v = pullback_metric(&fv.map);
        let mut ef = [0.0f64; 3];
        for (a, b) in pb_v.values().iter().zip(pb_u.values()) {
            ef[0] = ef[0].max((a.e - b.e).abs());
            ef[1] = ef[1].max((a.f - b.f).abs());
            ef[2] = ef[2].max((a.g - b.g - rho_v).abs());
        }
        println!("after u@32, v@{nv:3}: E pol {:.5}  F pol {:.5}  G err {:.5}  (E rel {:.2})", ef[0], ef[1], ef[2], ef[0]/rho_v);
    }
}
