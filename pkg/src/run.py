import subprocess
import sys
import platform


def main():
    current_os = platform.system().lower()
    cmd = [sys.executable, "-m", "src.cli", *sys.argv[1:]]
    if not sys.argv[1:]:
        cmd += ["--preset", "exp1"]
    print(f"Running evpn-sim on {current_os} using:")
    print(" ".join(cmd))
    sys.exit(subprocess.run(cmd).returncode)


if __name__ == "__main__":
    main()
