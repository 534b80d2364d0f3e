import { ApiClient, ApiError, type SessionStateWire } from "./api.js";
import { CATALOG, STEP_LABELS } from "./catalog.js";
import { computeGate, type Gate } from "./gating.js";
import { Poller } from "./poller.js";
import { TranscriptView } from "./transcript.js";

interface Elements {
  badge: HTMLElement;
  notice: HTMLElement;
  noticeText: HTMLElement;
  retry: HTMLButtonElement;
  transcript: HTMLElement;
  dropzone: HTMLElement;
  fileInput: HTMLInputElement;
  indicator: HTMLElement;
  textbox: HTMLTextAreaElement;
  sendButton: HTMLButtonElement;
  download: HTMLAnchorElement;
}

/** The single-page chat screen. Pure client of the HTTP API: it uploads,
 * sends text, polls for turns, and mirrors the session state it is told. */
export class SessionScreen {
  private sessionId = "";
  private lastState: SessionStateWire | null = null;
  private sendPending = false;
  private uploadPending = false;
  private noticeKind: "none" | "connection" | "error" = "none";
  private readonly poller: Poller;
  private transcript!: TranscriptView;
  private els!: Elements;

  constructor(
    private readonly root: HTMLElement,
    private readonly api: ApiClient,
    pollMs = 1000,
  ) {
    this.poller = new Poller(() => this.pollTick(), pollMs);
  }

  async init(): Promise<void> {
    const state = await this.api.createSession();
    this.sessionId = state.session_id;
    this.lastState = state;
    this.render();
    this.applyGate();
    this.poller.start();
  }

  dispose(): void {
    this.poller.stop();
  }

  private render(): void {
    this.root.innerHTML = "";

    const header = document.createElement("header");
    const title = document.createElement("h1");
    title.textContent = CATALOG.title;
    const badge = document.createElement("span");
    badge.className = "step-badge";
    header.append(title, badge);

    const notice = document.createElement("div");
    notice.className = "notice";
    notice.hidden = true;
    const noticeText = document.createElement("span");
    noticeText.className = "notice-text";
    const retry = document.createElement("button");
    retry.type = "button";
    retry.className = "retry";
    retry.textContent = CATALOG.retry;
    retry.hidden = true;
    retry.addEventListener("click", () => this.poller.kick());
    notice.append(noticeText, retry);

    const transcript = document.createElement("main");
    transcript.className = "transcript";

    const dropzone = document.createElement("div");
    dropzone.className = "dropzone";
    const hint = document.createElement("span");
    hint.textContent = CATALOG.dropHint;
    const picker = document.createElement("label");
    picker.className = "file-picker";
    picker.textContent = ` ${CATALOG.browse}`;
    const fileInput = document.createElement("input");
    fileInput.type = "file";
    fileInput.accept = ".zip,application/zip";
    fileInput.hidden = true;
    picker.prepend(fileInput);
    dropzone.append(hint, picker);

    dropzone.addEventListener("dragover", (event) => {
      event.preventDefault();
      dropzone.classList.add("dragging");
    });
    dropzone.addEventListener("dragleave", () => {
      dropzone.classList.remove("dragging");
    });
    dropzone.addEventListener("drop", (event) => {
      event.preventDefault();
      dropzone.classList.remove("dragging");
      const file = (event as DragEvent).dataTransfer?.files?.[0];
      if (file) {
        void this.uploadFile(file);
      }
    });
    fileInput.addEventListener("change", () => {
      const file = fileInput.files?.[0];
      if (file) {
        void this.uploadFile(file);
      }
    });

    const composer = document.createElement("footer");
    composer.className = "composer";
    const indicator = document.createElement("div");
    indicator.className = "indicator";
    indicator.hidden = true;
    const dots = document.createElement("span");
    dots.className = "dots";
    const indicatorLabel = document.createElement("span");
    indicatorLabel.textContent = CATALOG.processing;
    indicator.append(dots, indicatorLabel);

    const textbox = document.createElement("textarea");
    textbox.className = "textbox";
    textbox.rows = 2;
    textbox.placeholder = CATALOG.composerPlaceholder;
    textbox.addEventListener("keydown", (event) => {
      if (event.key === "Enter" && !event.shiftKey) {
        event.preventDefault();
        void this.sendCurrentText();
      }
    });

    const sendButton = document.createElement("button");
    sendButton.type = "button";
    sendButton.className = "send";
    sendButton.textContent = CATALOG.sendLabel;
    sendButton.addEventListener("click", () => void this.sendCurrentText());

    const download = document.createElement("a");
    download.className = "download footer-download";
    download.setAttribute("download", "");
    download.textContent = CATALOG.downloadPackage;
    download.hidden = true;

    composer.append(indicator, textbox, sendButton, download);
    this.root.append(header, notice, transcript, dropzone, composer);

    this.els = {
      badge,
      notice,
      noticeText,
      retry,
      transcript,
      dropzone,
      fileInput,
      indicator,
      textbox,
      sendButton,
      download,
    };
    this.transcript = new TranscriptView(transcript, {
      onExampleChosen: (text) => this.fillComposer(text),
      artifactUrl: () => this.api.artifactUrl(this.sessionId),
    });
  }

  /** Chosen examples land in the text box; sending stays a manual act. */
  private fillComposer(text: string): void {
    this.els.textbox.value = text;
    this.els.textbox.focus();
  }

  private async uploadFile(archive: Blob): Promise<void> {
    if (!this.currentGate().canUpload) {
      return;
    }
    this.hideNotice("error");
    this.uploadPending = true;
    this.applyGate();
    try {
      await this.api.upload(this.sessionId, archive);
      this.uploadPending = false;
      this.poller.kick();
    } catch (error) {
      this.uploadPending = false;
      if (error instanceof ApiError) {
        this.showNotice("error", CATALOG.uploadRejected(error.message));
      } else {
        this.showNotice("connection", CATALOG.connectionLost);
      }
    } finally {
      this.applyGate();
    }
  }

  private async sendCurrentText(): Promise<void> {
    const text = this.els.textbox.value.trim();
    if (text === "" || !this.currentGate().canSend) {
      return;
    }
    this.hideNotice("error");
    this.sendPending = true;
    this.applyGate();
    try {
      await this.api.send(this.sessionId, text);
      this.els.textbox.value = "";
      this.sendPending = false;
      this.poller.kick();
    } catch (error) {
      this.sendPending = false;
      if (error instanceof ApiError) {
        this.showNotice("error", CATALOG.requestRejected(error.message));
      } else {
        this.showNotice("connection", CATALOG.connectionLost);
      }
    } finally {
      this.applyGate();
    }
  }

  private async pollTick(): Promise<void> {
    try {
      const events = await this.api.events(this.sessionId, this.transcript.cursor);
      this.transcript.append(events.turns);
      this.lastState = await this.api.state(this.sessionId);
      this.hideNotice("connection");
      this.applyGate();
    } catch (error) {
      this.showNotice("connection", CATALOG.connectionLost, true);
      throw error; // let the poller back off
    }
  }

  private currentGate(): Gate {
    return computeGate({
      step: this.lastState?.step ?? "ProjectLocation",
      busy: this.lastState?.busy ?? false,
      sendPending: this.sendPending,
      uploadPending: this.uploadPending,
    });
  }

  private applyGate(): void {
    const gate = this.currentGate();
    this.els.textbox.disabled = !gate.textEnabled;
    this.els.indicator.hidden = !gate.indicatorVisible;
    this.els.sendButton.disabled = !gate.canSend;
    this.els.fileInput.disabled = !gate.canUpload;
    this.els.dropzone.classList.toggle("disabled", !gate.canUpload);
    this.els.dropzone.hidden = this.lastState?.step !== "ProjectLocation";

    const step = this.lastState?.step ?? "ProjectLocation";
    this.els.badge.textContent = STEP_LABELS[step] ?? step;

    const ready = this.lastState?.package_ready ?? false;
    this.els.download.hidden = !ready;
    if (ready) {
      this.els.download.href = this.api.artifactUrl(this.sessionId);
    }
  }

  private showNotice(
    kind: "connection" | "error",
    text: string,
    withRetry = kind === "connection",
  ): void {
    this.noticeKind = kind;
    this.els.notice.hidden = false;
    this.els.noticeText.textContent = text;
    this.els.retry.hidden = !withRetry;
  }

  private hideNotice(kind: "connection" | "error"): void {
    if (this.noticeKind === kind) {
      this.noticeKind = "none";
      this.els.notice.hidden = true;
    }
  }
}
