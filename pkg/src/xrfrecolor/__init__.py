"""Virtual recolouring of MA-XRF datacubes.

Pipeline: pigment palette -> synthetic datacubes -> VAE spectral embedding ->
SmallUViT recolouring -> image metrics.
"""
__version__ = "0.1.0"


def version_string():
    """``<version>`` or ``<version>+<git describe>`` when run from a checkout."""
    import subprocess
    from pathlib import Path

    try:
        out = subprocess.run(["git", "describe", "--tags", "--always", "--dirty"], cwd=Path(__file__).parent,
                             capture_output=True, text=True, timeout=5)
        desc = out.stdout.strip() if out.returncode == 0 else ""
    except (OSError, subprocess.SubprocessError):
        desc = ""
    return f"{__version__}+{desc}" if desc else __version__
