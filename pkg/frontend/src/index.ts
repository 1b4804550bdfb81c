export * from "./model.js";
export * from "./codec.js";
export * from "./client.js";
export * from "./frames.js";
export * from "./policy.js";
