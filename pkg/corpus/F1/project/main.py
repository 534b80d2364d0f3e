print("hello reproducibility")
