"""Sum the value column of a small CSV table."""
import pandas as pd
from tqdm import tqdm


def main() -> None:
    frame = pd.read_csv("data.csv")
    total = 0
    for value in tqdm(frame["value"], disable=True):
        total += int(value)
    print(f"sum={total}")


if __name__ == "__main__":
    main()
