/** Every user-visible string in one place, so translation is a one-file job. */

export const CATALOG = {
  title: "sciconv",
  dropHint: "Drag your project zip here, or",
  browse: "browse for a file",
  composerPlaceholder: "Type a message…",
  sendLabel: "Send",
  processing: "Processing…",
  seeExamples: "See Examples",
  downloadPackage: "Download package",
  connectionLost: "Connection lost. Retrying…",
  retry: "Retry",
  uploadRejected: (reason: string): string => `Upload rejected: ${reason}`,
  requestRejected: (reason: string): string => `Request rejected: ${reason}`,
} as const;

/** Short badge labels keyed by the wire step names. */
export const STEP_LABELS: Record<string, string> = {
  ProjectLocation: "Waiting for upload",
  FindProjectFiles: "Scanning project",
  ParametersToUse: "Awaiting commands",
  FindConfigurations: "Inferring environment",
  BuildDockerfile: "Writing Dockerfile",
  BuildDockerImage: "Building image",
  RunContainer: "Running experiment",
  ResearchArtifact: "Packaging",
  Completed: "Completed",
  WaitForChatInteraction: "Needs your input",
};
