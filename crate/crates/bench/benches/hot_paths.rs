use criterion::{criterion_group, criterion_main, Criterion};
use proxipush::sensors::{depth_render, lidar_scan};
use proxipush::{descriptor_pipeline, step, ControlCommand, ModelKind, SensorInput, WorkbenchConfig, SEQ_LEN};
use proxipush_bench::{box_scene, random_model};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

fn descriptor(c: &mut Criterion) {
    let wb = WorkbenchConfig::default();
    let (state, specs) = box_scene();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let scan = lidar_scan(&state, &wb.sensors.lidar, &specs, &mut rng);
    let frame = depth_render(&state, &wb.sensors.camera, &specs, &mut rng);
    let h_b = wb.world.robot.base_height;
    c.bench_function("lidar_scan", |b| {
        b.iter(|| lidar_scan(black_box(&state), &wb.sensors.lidar, &specs, &mut rng))
    });
    c.bench_function("descriptor_lidar", |b| {
        b.iter(|| descriptor_pipeline(SensorInput::Lidar(black_box(&scan)), &wb.sensors.lidar.mount, &wb.descriptor, h_b))
    });
    c.bench_function("descriptor_depth", |b| {
        b.iter(|| descriptor_pipeline(SensorInput::Depth(black_box(&frame)), &wb.sensors.camera.mount, &wb.descriptor, h_b))
    });
}

fn lstm(c: &mut Criterion) {
    let s = WorkbenchConfig::default().descriptor.s();
    let window: Vec<f64> = (0..SEQ_LEN * s).map(|i| (i % 7) as f64 / 7.0).collect();
    for hidden in [16, 32] {
        let cle = random_model(ModelKind::Cle, s, hidden, 2);
        let cte = random_model(ModelKind::Cte, s, hidden, 2);
        c.bench_function(&format!("lstm_forward_cle_h{hidden}"), |b| {
            b.iter(|| cle.predict_location(black_box(&window), 0.3))
        });
        c.bench_function(&format!("lstm_forward_cte_h{hidden}"), |b| {
            b.iter(|| cte.predict_class(black_box(&window)))
        });
    }
}

fn world(c: &mut Criterion) {
    let (state, specs) = box_scene();
    let cmd = ControlCommand {
        v_x: 0.3,
        v_y: 0.05,
        omega: 0.1,
    };
    c.bench_function("world_step_push", |b| b.iter(|| step(black_box(&state), &cmd, 0.01, &specs)));
    let mut free = state;
    free.object.x += 2.0;
    c.bench_function("world_step_free", |b| b.iter(|| step(black_box(&free), &cmd, 0.01, &specs)));
}

criterion_group!(benches, descriptor, lstm, world);
criterion_main!(benches);
