//! `encode-demo`: positional encodings rendered one channel per image.

use std::path::PathBuf;

use lcn4_core::encoding::{fdc_encode, grid_encode, sincos_encode};
use lcn4_core::pgm::{scale_to_bytes, write_pgm};
use lcn4_core::tensor::{Graph, Tensor};

use crate::args::{DemoArgs, EncodingKind};
use crate::failure::{Failure, Outcome};
use crate::run::{prepare_dir, DEFAULT_RUN_ROOT, RUN_DIR_ENV};

#[derive(Debug)]
pub struct DemoOutcome {
    pub dir: PathBuf,
    /// The rendered `1×H×W×C` encoding.
    pub encoding: Tensor,
    pub files: Vec<PathBuf>,
}

fn name(kind: EncodingKind) -> &'static str {
    match kind {
        EncodingKind::Grid => "grid",
        EncodingKind::Sincos => "sincos",
        EncodingKind::Fdc => "fdc",
    }
}

/// Computes the encoding of a single `H×W×C` map.
pub fn render(args: &DemoArgs) -> Outcome<Tensor> {
    let [h, w, c] = args.dims()?;
    let t = match args.encoding {
        EncodingKind::Grid => grid_encode(1, h, w, c).map(|g| g.tensor),
        EncodingKind::Sincos => sincos_encode(1, h, w, c),
        EncodingKind::Fdc => {
            let mut g = Graph::inference();
            let d = g.constant(&Tensor::full([1, h, w, c], args.fill));
            fdc_encode(&mut g, d, args.fourier.unwrap_or(c), args.amplitude)
                .map(|e| g.tensor(e.encoding))
        }
    };
    t.map_err(|e| Failure::config(e.to_string()))
}

pub fn cmd_encode_demo(args: &DemoArgs) -> Outcome<DemoOutcome> {
    let encoding = render(args)?;
    let [h, w, c] = args.dims()?;
    let dir = args.out.clone().unwrap_or_else(|| {
        std::env::var_os(RUN_DIR_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from(DEFAULT_RUN_ROOT))
            .join(format!("encode-demo-{}", name(args.encoding)))
    });
    prepare_dir(&dir, args.force)?;
    let data = encoding.data();
    let mut files = Vec::with_capacity(c);
    for ch in 0..c {
        let plane: Vec<f64> = (0..h * w).map(|i| data[i * c + ch]).collect();
        let path = dir.join(format!("{}_c{ch:03}.pgm", name(args.encoding)));
        write_pgm(&path, w, h, &scale_to_bytes(&plane))?;
        files.push(path);
    }
    println!("{} channel images in {}", files.len(), dir.display());
    Ok(DemoOutcome {
        dir,
        encoding,
        files,
    })
}
