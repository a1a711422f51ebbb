//! `RMDL` model files and architecture fingerprints.
//!
//! Layout (all integers little-endian):
//! `RMDL` | version u8 | spec text (u32 len) | layer count u32 | per layer:
//! name (u16 len) | layer spec text (u16 len) | stage u8 | trainable u8 |
//! tensor groups (params, then buffers): count u8, then per tensor name (u8 len),
//! rank u8, dims u32 each, values f64.

use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{Model, ModelSpec};
use crate::nn::{Layer, LayerSpec, Network, Stage, Tensor};

pub const MODEL_MAGIC: &[u8; 4] = b"RMDL";
pub const MODEL_VERSION: u8 = 1;

/// SHA-256 over layer names, specs and stages (weights excluded).
pub fn architecture_fingerprint(net: &Network) -> [u8; 32] {
    let mut h = Sha256::new();
    for l in net.layers() {
        h.update(format!("{}\t{}\t{}\n", l.name, l.spec(), l.stage.index()).as_bytes());
    }
    h.finalize().into()
}

pub(crate) struct Writer<W: Write>(pub W);

impl<W: Write> Writer<W> {
    pub fn bytes(&mut self, b: &[u8]) -> Result<()> {
        Ok(self.0.write_all(b)?)
    }
    pub fn u8(&mut self, v: u8) -> Result<()> {
        self.bytes(&[v])
    }
    pub fn u16(&mut self, v: u16) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }
    pub fn u32(&mut self, v: u32) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }
    pub fn f64(&mut self, v: f64) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }
    pub fn str16(&mut self, s: &str) -> Result<()> {
        let n = u16::try_from(s.len()).map_err(|_| Error::Container(format!("string too long: {} bytes", s.len())))?;
        self.u16(n)?;
        self.bytes(s.as_bytes())
    }
    pub fn shape(&mut self, shape: &[usize]) -> Result<()> {
        let rank = u8::try_from(shape.len()).map_err(|_| Error::Container("tensor rank above 255".into()))?;
        self.u8(rank)?;
        for &d in shape {
            self.u32(u32::try_from(d).map_err(|_| Error::Container(format!("dimension {d} too large")))?)?;
        }
        Ok(())
    }
}

pub(crate) struct Reader<R: Read>(pub R);

impl<R: Read> Reader<R> {
    pub fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut b = vec![0; n];
        self.0.read_exact(&mut b).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => Error::Container("file is truncated".into()),
            _ => Error::Io(e),
        })?;
        Ok(b)
    }
    pub fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.bytes(N)?.try_into().expect("length N"))
    }
    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.array::<1>()?[0])
    }
    pub fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array()?))
    }
    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }
    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }
    pub fn string(&mut self, n: usize) -> Result<String> {
        String::from_utf8(self.bytes(n)?).map_err(|_| Error::Container("string is not UTF-8".into()))
    }
    pub fn str16(&mut self) -> Result<String> {
        let n = self.u16()? as usize;
        self.string(n)
    }
    pub fn shape(&mut self) -> Result<Vec<usize>> {
        let rank = self.u8()? as usize;
        (0..rank).map(|_| self.u32().map(|d| d as usize)).collect()
    }
}

fn write_group<W: Write>(w: &mut Writer<W>, group: &[(&'static str, &Tensor)]) -> Result<()> {
    w.u8(group.len() as u8)?;
    for (name, t) in group {
        w.u8(name.len() as u8)?;
        w.bytes(name.as_bytes())?;
        w.shape(t.shape())?;
        for &v in t.data() {
            w.f64(v)?;
        }
    }
    Ok(())
}

fn read_group<R: Read>(r: &mut Reader<R>, layer: &str, mut dest: Vec<(&'static str, &mut Tensor)>) -> Result<()> {
    let n = r.u8()? as usize;
    if n != dest.len() {
        return Err(Error::Container(format!("layer `{layer}`: {n} tensors stored, {} expected", dest.len())));
    }
    for (expected, t) in dest.iter_mut() {
        let len = r.u8()? as usize;
        let name = r.string(len)?;
        if name != *expected {
            return Err(Error::Container(format!("layer `{layer}`: tensor `{name}` where `{expected}` expected")));
        }
        let shape = r.shape()?;
        if shape != t.shape() {
            return Err(Error::Container(format!("layer `{layer}.{name}`: shape {shape:?}, expected {:?}", t.shape())));
        }
        for v in t.data_mut() {
            *v = r.f64()?;
        }
    }
    Ok(())
}

pub fn write_model<W: Write>(model: &Model, out: W) -> Result<()> {
    let mut w = Writer(out);
    w.bytes(MODEL_MAGIC)?;
    w.u8(MODEL_VERSION)?;
    let spec = model.spec.to_string();
    w.u32(spec.len() as u32)?;
    w.bytes(spec.as_bytes())?;
    w.u32(model.network.len() as u32)?;
    for l in model.network.layers() {
        w.str16(&l.name)?;
        w.str16(&l.spec().to_string())?;
        w.u8(l.stage.index())?;
        w.u8(l.trainable as u8)?;
        write_group(&mut w, &l.params())?;
        write_group(&mut w, &l.buffers())?;
    }
    Ok(())
}

pub fn read_model<R: Read>(input: R) -> Result<Model> {
    let mut r = Reader(input);
    if &r.array::<4>()? != MODEL_MAGIC {
        return Err(Error::Container("not a model file (bad magic)".into()));
    }
    let version = r.u8()?;
    if version != MODEL_VERSION {
        return Err(Error::Container(format!("unsupported model version {version}")));
    }
    let spec_len = r.u32()? as usize;
    let spec: ModelSpec = r.string(spec_len)?.parse()?;
    let n = r.u32()? as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut layers = Vec::with_capacity(n.min(1024));
    for _ in 0..n {
        let name = r.str16()?;
        let ls: LayerSpec = r.str16()?.parse()?;
        let stage = Stage::from_index(r.u8()?)?;
        let trainable = match r.u8()? {
            0 => false,
            1 => true,
            b => return Err(Error::Container(format!("layer `{name}`: bad trainable flag {b}"))),
        };
        let mut layer = Layer::init(name.clone(), &ls, stage, &mut rng)?;
        layer.trainable = trainable;
        read_group(&mut r, &name, layer.params_mut())?;
        read_group(&mut r, &name, layer.buffers_mut())?;
        layers.push(layer);
    }
    let mut trailing = [0u8; 1];
    if r.0.read(&mut trailing)? != 0 {
        return Err(Error::Container("unexpected bytes after the last layer".into()));
    }
    let network = Network::new(layers)?;
    let expected: Vec<(String, String, Stage)> =
        spec.layer_specs()?.into_iter().map(|(n, s, st)| (n, s.to_string(), st)).collect();
    let found: Vec<(String, String, Stage)> =
        network.layers().iter().map(|l| (l.name.clone(), l.spec().to_string(), l.stage)).collect();
    if expected != found {
        return Err(Error::Container("layer list does not match the stored model description".into()));
    }
    Ok(Model { spec, network })
}

pub fn model_to_bytes(model: &Model) -> Result<Vec<u8>> {
    let mut v = Vec::new();
    write_model(model, &mut v)?;
    Ok(v)
}

pub fn save_model(model: &Model, path: &Path) -> Result<()> {
    write_atomic(path, &model_to_bytes(model)?)
}

pub fn load_model(path: &Path) -> Result<Model> {
    let bytes = std::fs::read(path)?;
    read_model(bytes.as_slice())
}

/// Raw parameter and buffer bytes of the layers in `stages`, in layer order.
pub fn stage_bytes(net: &Network, stages: &[Stage]) -> Vec<u8> {
    let mut out = Vec::new();
    for l in net.layers().iter().filter(|l| stages.contains(&l.stage)) {
        for (_, t) in l.params().into_iter().chain(l.buffers()) {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

/// Writes through a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let file_name =
        path.file_name().ok_or_else(|| Error::Argument(format!("`{}` is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", file_name.to_string_lossy(), std::process::id()));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path).inspect_err(|_| {
        let _ = std::fs::remove_file(&tmp);
    })?;
    Ok(())
}
