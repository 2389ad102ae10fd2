"""
chaotherm - 随机矩阵热化实验 - 主程序

    python main.py run --preset thermalizing
    python main.py run --config my_run.json --seed 3 --threads 4
    python main.py verify fast
    python main.py schema
    python main.py presets
"""
import argparse
import json
import logging
import sys

from app import __version__
from app.core.errors import ChaothermError, ConfigError, NumericError
from config import config

EXIT_OK = 0
EXIT_VERIFY_FAILED = 1
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_VERDICT = 4


def print_banner():
    """打印欢迎信息"""
    print("=" * 60)
    print(f"🎲 chaotherm 随机矩阵热化实验 v{__version__}")
    print("=" * 60)
    print()


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="chaotherm", description="混沌多体系统的随机矩阵热化实验")
    parser.add_argument("-v", "--verbose", action="store_true", help="输出 INFO 级别日志")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="执行一次实验并写出结果文件")
    run.add_argument("--config", help="JSON 配置文件")
    run.add_argument("--preset", help="从预设开始（配置文件与其余参数覆盖预设）")
    run.add_argument("--seed", type=int, help="主种子")
    run.add_argument("--realizations", type=int, help="实现次数 R")
    run.add_argument("--threads", type=int, help="线程数（默认取 CHAOTHERM_THREADS）")
    run.add_argument("--out", help="输出目录（默认取 CHAOTHERM_OUT）")
    run.add_argument("--assert-verdict", choices=("thermalizes", "does_not_thermalize", "inconclusive"),
                     help="判定结果不符时以状态码 4 退出")

    verify = sub.add_parser("verify", help="运行验收套件")
    verify.add_argument("suite", nargs="?", default="fast", help="fast 或 full")
    verify.add_argument("--threads", type=int, help="线程数")

    sub.add_parser("schema", help="打印运行配置的 JSON Schema")
    sub.add_parser("presets", help="列出预设")
    return parser


def resolve_run_config(args: argparse.Namespace):
    """预设 → 配置文件 → 命令行参数，依次覆盖"""
    from app.pipeline.presets import get_preset
    from app.pipeline.run_config import load_config, merge, validate_config

    data = get_preset(args.preset) if args.preset else {}
    if args.config:
        data = merge(data, load_config(args.config))
    data = merge(data, {
        "seed": args.seed,
        "realizations": args.realizations,
        "threads": args.threads,
        "out": args.out,
        "assert_verdict": args.assert_verdict,
    })
    if not data:
        raise ConfigError("需要 --preset 或 --config")
    return validate_config(data)


def show_report(report, out_dir: str):
    """打印一次运行的摘要"""
    verdict = report.verdict
    derived = report.derived
    marks = {"thermalizes": "✅", "does_not_thermalize": "🔥", "inconclusive": "❔"}
    print("\n📊 运行结果:")
    print("-" * 40)
    print(f"  Δ = {derived['delta']:.6g}（{derived['delta_source']}），N_Δ ≈ {derived['n_delta']:.3g}")
    print(f"  平台值: {verdict.plateau:.6g} ± {verdict.plateau_stderr:.2g}")
    print(f"  平衡值: {verdict.equilibrium:.6g}（能窗 {derived['eq_window']}）")
    print(f"  解析平台: {verdict.analytic_plateau:.6g}")
    print(f"  弛豫形状: {verdict.relaxation.shape}，τ = {verdict.relaxation.timescale:.4g}")
    if report.nns is not None:
        print(f"  KS(Wigner) = {report.nns.ks_wigner:.3g}，KS(Poisson) = {report.nns.ks_poisson:.3g}")
    if report.rigidity is not None:
        print(f"  Δ3 上翘位置: {report.rigidity.upbend_L}")
    print(f"  强度函数: {report.strength.preferred_shape}"
          f"（高斯宽度 {report.strength.gaussian_width:.3g}，洛伦兹宽度 {report.strength.lorentzian_width:.3g}）")
    print(f"\n{marks[verdict.verdict]} 判定: {verdict.verdict}")
    print(f"📁 结果文件: {out_dir}")


def command_run(args: argparse.Namespace) -> int:
    from app.pipeline.runner import run

    run_config = resolve_run_config(args)
    print(f"⏳ 运行中（N = {run_config.n}，R = {run_config.realizations}，种子 {run_config.seed}）...")
    report = run(run_config)
    show_report(report, report.execution["out"])
    if run_config.assert_verdict and report.verdict.verdict != run_config.assert_verdict:
        print(f"\n❌ 判定 {report.verdict.verdict} 与期望 {run_config.assert_verdict} 不符")
        return EXIT_VERDICT
    return EXIT_OK


def command_verify(args: argparse.Namespace) -> int:
    from app.pipeline.verify import format_results, run_suite
    from app.tools.parallel import resolve_workers

    print(f"🧪 验收套件: {args.suite}")
    results = run_suite(args.suite, resolve_workers(args.threads, config.THREADS))
    print(format_results(results))
    return EXIT_OK if all(r.passed for r in results) else EXIT_VERIFY_FAILED


def command_schema(args: argparse.Namespace) -> int:
    from app.pipeline.run_config import config_schema

    print(json.dumps(config_schema(), ensure_ascii=False, indent=2))
    return EXIT_OK


def command_presets(args: argparse.Namespace) -> int:
    from app.pipeline.presets import list_presets

    print("\n📌 可用预设：")
    for name, description in list_presets():
        print(f"  • {name:<28} {description}")
    return EXIT_OK


COMMANDS = {
    "run": command_run,
    "verify": command_verify,
    "schema": command_schema,
    "presets": command_presets,
}


def main(argv: list[str] | None = None) -> int:
    """主函数，返回退出状态码"""
    args = build_parser().parse_args(argv)
    level = "INFO" if args.verbose else config.LOG_LEVEL
    logging.basicConfig(level=level, format="%(asctime)s - %(levelname)s - %(message)s")

    problems = config.validate()
    if problems:
        print(f"❌ 环境变量格式错误: {', '.join(problems)}")
        return EXIT_CONFIG

    if args.command in ("run", "verify"):
        print_banner()
    try:
        return COMMANDS[args.command](args)
    except NumericError as e:
        print(f"\n❌ 数值错误: {e}")
        return EXIT_NUMERIC
    except ChaothermError as e:
        print(f"\n❌ 配置或参数错误: {e}")
        return EXIT_CONFIG
    except KeyboardInterrupt:
        print("\n\n👋 已中断")
        return 130


if __name__ == "__main__":
    sys.exit(main())
