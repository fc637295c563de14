use mirlab::numerics::{Tape, Tensor};
use mirlab::repr::model::{EncoderConfig, EncoderModel};
use std::time::Instant;

fn main() {
    let cfg = EncoderConfig::default();
    let n = 200;
    let mut shape = vec![n];
    shape.extend(cfg.obs_shape());
    let len: usize = shape.iter().product();
    let obs = Tensor::<f64>::new(shape.clone(), (0..len).map(|i| ((i % 97) as f64) / 97.0).collect()).unwrap();
    let m = EncoderModel::<f64>::new(&cfg, 1);
    let t = Instant::now();
    let e = m.encode(&obs).unwrap();
    println!("f64 fwd {n}: {:?} ({})", t.elapsed(), e.data()[0]);
    let t = Instant::now();
    let mut tape = Tape::new();
    let vars = m.attach(&mut tape);
    let e = m.encode_tape(&mut tape, &vars, &obs).unwrap();
    let l = tape.sum(e);
    tape.backward(l).unwrap();
    println!("f64 fwd+bwd {n}: {:?}", t.elapsed());
    let m32 = m.cast::<f32>();
    let obs32 = obs.cast::<f32>();
    let t = Instant::now();
    let _ = m32.encode(&obs32).unwrap();
    println!("f32 fwd {n}: {:?}", t.elapsed());
    let small = Tensor::<f32>::new({let mut s=vec![32]; s.extend(cfg.obs_shape()); s}, obs32.data()[..32*cfg.obs_len()].to_vec()).unwrap();
    let t = Instant::now();
    for _ in 0..10 { let _ = m32.encode(&small).unwrap(); }
    println!("f32 fwd 10x32: {:?}", t.elapsed());
}
