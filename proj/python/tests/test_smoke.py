"""End-to-end smoke of the python module: data, training, attack, suite, uap."""

import math
import os
import tempfile

import ttlab


def small_data():
    cfg = ttlab.SynthConfig()
    cfg.train_n, cfg.test_n, cfg.seed = 600, 120, 77
    cfg.cue_amp, cfg.cue_count = 0.85, 4
    cfg.smooth_noise, cfg.white_noise = 0.10, 0.05
    return ttlab.synth_cifar_split(cfg, False), ttlab.synth_cifar_split(cfg, True)


def quick_train(arch, seed, train, test, epochs=3):
    tc = ttlab.TrainConfig()
    tc.epochs, tc.batch_size, tc.lr, tc.decay_epochs, tc.seed = epochs, 32, 0.02, [], seed
    model = ttlab.build_model(arch, 10, seed)
    metrics = ttlab.train(model, train, test, tc)
    return model, metrics


def test_synth_data_is_deterministic():
    train, test = small_data()
    train2, _ = small_data()
    assert train.size() == 600 and test.size() == 120
    assert test.num_classes == 10
    assert train.image(5).data == train2.image(5).data
    img = test.image(0)
    assert img.shape == [3, 32, 32]
    assert all(0.0 <= v <= 1.0 for v in img.data)


def test_train_attack_and_bounds():
    train, test = small_data()
    model, metrics = quick_train("mini_vgg", 21, train, test)
    assert metrics.test_accuracy > 0.6

    cfg = ttlab.AttackConfig()
    cfg.loss.kind = ttlab.LossKind.logit
    cfg.iterations, cfg.checkpoints = 10, [5, 10]
    cfg.use_mi = cfg.use_ti = cfg.use_di = True
    cfg.seed = 9
    image = test.image(0)
    target = (test.labels[0] + 3) % 10
    res = ttlab.attack([model], image, target, test.labels[0], cfg)

    assert len(res.loss_trace) == 10
    assert res.checkpoint_iters == [5, 10]
    linf = max(abs(a - b) for a, b in zip(res.final_image.data, image.data))
    assert linf <= cfg.epsilon + 1e-6
    assert all(0.0 <= v <= 1.0 for v in res.final_image.data)
    assert res.target_logit_trace[-1] > res.target_logit_trace[0]

    repeat = ttlab.attack([model], image, target, test.labels[0], cfg)
    assert repeat.final_image.data == res.final_image.data


def test_suite_csv_schema_and_parallel_identity():
    train, test = small_data()
    vgg, _ = quick_train("mini_vgg", 21, train, test)
    res, _ = quick_train("mini_res", 22, train, test)
    models = [ttlab.NamedModel("vgg_a", vgg), ttlab.NamedModel("res_b", res)]

    sc = ttlab.SuiteConfig()
    sc.attack.iterations, sc.attack.checkpoints = 4, [2, 4]
    sc.attack.use_mi = sc.attack.use_ti = sc.attack.use_di = True
    sc.attack.seed = 17
    sc.n_images = 4

    report = ttlab.run_single_transfer(models, test, sc)
    csv = ttlab.transfer_csv(report)
    lines = csv.strip().split("\n")
    assert lines[0] == ("source,target,loss,methods,checkpoint,epsilon,alpha,seed,"
                        "n_images,targeted_sr,nontargeted_sr,mean_target_conf,mean_target_rank")
    assert len(lines) == 1 + 2 * 2 * 2
    assert all(row.split(",")[3] == "mi+ti+di" for row in lines[1:])

    sc.jobs = 3
    parallel = ttlab.run_single_transfer(models, test, sc)
    assert ttlab.transfer_csv(parallel) == csv

    for row in report.rows:
        assert 0.0 <= row.targeted_sr <= 1.0
        assert 1.0 <= row.mean_target_rank <= 10.0


def test_trend_series_are_normalized():
    train, test = small_data()
    vgg, _ = quick_train("mini_vgg", 21, train, test)
    sc = ttlab.SuiteConfig()
    sc.attack.iterations, sc.attack.checkpoints = 5, [5]
    sc.n_images = 3
    series = ttlab.run_trend_analysis(ttlab.NamedModel("vgg_a", vgg), test, sc)
    assert [s.loss for s in series] == ["ce", "logit"]
    for s in series:
        assert len(s.norm_loss) == 5
        assert s.norm_loss[0] == 1.0
        assert s.norm_grad_l1[0] == 1.0
        assert all(math.isfinite(v) for v in s.target_logit)


def test_uap_roundtrip_and_eval():
    train, test = small_data()
    vgg, _ = quick_train("mini_vgg", 21, train, test)
    cfg = ttlab.AttackConfig()
    cfg.loss.kind = ttlab.LossKind.logit
    cfg.iterations, cfg.checkpoints = 5, [5]
    cfg.init = ttlab.InitKind.gaussian
    cfg.seed = 40
    uap = ttlab.generate_uap([vgg], "vgg_a", 3, cfg)
    assert uap.target == 3
    assert max(abs(v) for v in uap.delta.data) <= cfg.epsilon + 1e-6

    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "one.uap")
        ttlab.save_uap(uap, path)
        back = ttlab.load_uap(path)
        assert back.delta.data == uap.delta.data
        assert back.arch_id == "vgg_a"
    rate = ttlab.evaluate_uap(uap, vgg, test, 50)
    assert 0.0 <= rate <= 1.0


def test_errors_surface_as_python_exceptions():
    train, test = small_data()
    try:
        ttlab.build_model("resnet152", 10, 1)
        assert False, "expected UsageError"
    except ttlab.UsageError as e:
        assert "resnet152" in str(e)

    blank = ttlab.build_model("mini_vgg", 10, 1)
    models = [ttlab.NamedModel("blank", blank)]
    sc = ttlab.SuiteConfig()
    try:
        ttlab.run_single_transfer(models, test, sc)
        assert False, "expected UsageError"
    except ttlab.UsageError as e:
        assert "at least 2" in str(e)

    untrained = [
        ttlab.NamedModel("b1", blank),
        ttlab.NamedModel("b2", ttlab.build_model("mini_res", 10, 2)),
    ]
    try:
        ttlab.ensure_trained(untrained, test)
        assert False, "expected UsageError"
    except ttlab.UsageError as e:
        assert "b1" in str(e) and "accuracy gate" in str(e)


if __name__ == "__main__":
    for name, fn in sorted(globals().items()):
        if name.startswith("test_") and callable(fn):
            fn()
            print(f"{name} ok")
    print("all smoke tests passed")
