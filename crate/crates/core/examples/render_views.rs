//! Render the six-view normal atlas of a toy car, a side depth image and
//! its Canny edges, and write them as PNG files.
//!
//! cargo run --release -p vehiclesdf --example render_views -- [out_dir]

use std::path::PathBuf;

use vehiclesdf::drag::{build_atlas, canny_edges, render_view, synthetic_cd, Channel, View};
use vehiclesdf::geometry::{marching_cubes, GridSpec};
use vehiclesdf::toycar::{generate_corpus, make_toy_car, CorpusRanges};

fn main() -> vehiclesdf::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("vehiclesdf-render"));
    std::fs::create_dir_all(&out)?;

    let manifest = generate_corpus(1, 5, &CorpusRanges::default())?;
    let car = make_toy_car(&manifest.entries[0].spec)?;
    let mesh = marching_cubes(&car.shape, &GridSpec::new(128, 0.95)?)?.mesh;

    let atlas = build_atlas(&mesh, 128)?;
    std::fs::write(out.join("atlas.png"), atlas.to_png()?)?;
    for view in View::ATLAS {
        let img = atlas.view(view);
        println!(
            "{:<7} foreground {:>5} px",
            view.name(),
            img.foreground_count()
        );
        std::fs::write(out.join(format!("{}.png", view.name())), img.to_png()?)?;
    }

    let depth = render_view(&mesh, View::Side, 128, Channel::Depth)?;
    let edges = canny_edges(&depth, 0.1, 0.3)?;
    std::fs::write(out.join("side_depth.png"), depth.to_png()?)?;
    std::fs::write(out.join("side_canny.png"), edges.to_png()?)?;

    let terms = synthetic_cd(&atlas)?;
    println!(
        "edge pixels {}, front occupancy {:.3}, rear taper {:.3}, oracle cd {:.4}",
        edges.count(),
        terms.front_occupancy,
        terms.rear_taper,
        terms.cd
    );
    println!("images in {}", out.display());
    Ok(())
}
