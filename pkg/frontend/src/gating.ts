/** Input gating.
 *
 * Hard invariant: exactly one of {text box enabled, processing indicator
 * visible} at any time. The send button is stricter than the text box (it
 * also needs a step that accepts messages) and the drop zone only works
 * before an archive has been taken.
 */

export interface GateInput {
  step: string;
  busy: boolean;
  sendPending: boolean;
  uploadPending: boolean;
}

export interface Gate {
  textEnabled: boolean;
  indicatorVisible: boolean;
  canSend: boolean;
  canUpload: boolean;
}

const MESSAGE_STEPS = new Set([
  "ParametersToUse",
  "WaitForChatInteraction",
  "Completed",
]);

export function computeGate(input: GateInput): Gate {
  const working = input.busy || input.sendPending || input.uploadPending;
  const textEnabled = !working;
  return {
    textEnabled,
    indicatorVisible: !textEnabled,
    canSend: textEnabled && MESSAGE_STEPS.has(input.step),
    canUpload: !working && input.step === "ProjectLocation",
  };
}
