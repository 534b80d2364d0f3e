import type { ChatTurnWire } from "./api.js";
import { CATALOG } from "./catalog.js";
import { examplesControl } from "./examples.js";

/** A chat turn plus its render hints. */
export interface UiMessage {
  seq: number;
  side: "user" | "system";
  styleClass: string;
  text: string;
  examples: string[];
  offersDownload: boolean;
}

const KIND_CLASSES: Record<string, string> = {
  Prompt: "kind-prompt",
  Status: "kind-status",
  Error: "kind-error",
  ExamplesAvailable: "kind-prompt",
  Result: "kind-result",
};

export function toUiMessage(turn: ChatTurnWire): UiMessage {
  return {
    seq: turn.seq,
    side: turn.role === "User" ? "user" : "system",
    styleClass: KIND_CLASSES[turn.kind] ?? "kind-status",
    text: turn.text,
    examples: [...turn.examples],
    offersDownload: turn.kind === "Result",
  };
}

export interface TranscriptHooks {
  onExampleChosen: (text: string) => void;
  artifactUrl: () => string;
}

/** Appends bubbles in seq order and never renders the same turn twice: the
 * cursor only moves forward, and poll responses are filtered against it. */
export class TranscriptView {
  private lastSeq = 0;

  constructor(
    private readonly container: HTMLElement,
    private readonly hooks: TranscriptHooks,
  ) {}

  get cursor(): number {
    return this.lastSeq;
  }

  append(batch: readonly ChatTurnWire[]): void {
    const fresh = batch
      .filter((turn) => turn.seq > this.lastSeq)
      .sort((a, b) => a.seq - b.seq);
    for (const turn of fresh) {
      this.container.append(this.renderBubble(toUiMessage(turn)));
      this.lastSeq = turn.seq;
    }
    if (fresh.length > 0) {
      this.container.scrollTop = this.container.scrollHeight;
    }
  }

  private renderBubble(message: UiMessage): HTMLElement {
    const bubble = document.createElement("div");
    bubble.className = `bubble ${message.side} ${message.styleClass}`;
    bubble.dataset["seq"] = String(message.seq);

    const text = document.createElement("p");
    text.textContent = message.text;
    bubble.append(text);

    if (message.offersDownload) {
      const link = document.createElement("a");
      link.className = "download";
      link.href = this.hooks.artifactUrl();
      link.setAttribute("download", "");
      link.textContent = CATALOG.downloadPackage;
      bubble.append(link);
    }

    const control = examplesControl(message.examples, this.hooks.onExampleChosen);
    if (control) {
      bubble.append(control);
    }
    return bubble;
  }
}
