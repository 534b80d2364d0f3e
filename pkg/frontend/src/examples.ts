import { CATALOG } from "./catalog.js";

/** "See Examples" control: a button that reveals sample inputs; choosing one
 * fills the text box but never sends. Returns null when there is nothing to
 * show, so turns without examples get no button. */
export function examplesControl(
  examples: readonly string[],
  onChoose: (text: string) => void,
): HTMLElement | null {
  if (examples.length === 0) {
    return null;
  }
  const wrap = document.createElement("div");
  wrap.className = "examples";

  const button = document.createElement("button");
  button.type = "button";
  button.className = "see-examples";
  button.textContent = CATALOG.seeExamples;

  const list = document.createElement("ul");
  list.className = "examples-list";
  list.hidden = true;

  for (const example of examples) {
    const item = document.createElement("li");
    const choose = document.createElement("button");
    choose.type = "button";
    choose.className = "example-option";
    choose.textContent = example;
    choose.addEventListener("click", () => {
      onChoose(example);
      list.hidden = true;
    });
    item.append(choose);
    list.append(item);
  }

  button.addEventListener("click", () => {
    list.hidden = !list.hidden;
  });

  wrap.append(button, list);
  return wrap;
}
